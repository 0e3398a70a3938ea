"""Desk-scale experiments on the toy grammar, shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .baseline import BaselineConfig, TokenLM, train_baseline
from .eval import replay_baseline, replay_corpus, replay_sllm
from .sllm import STOP, SllmConfig, SllmModel, generate_ids, graft, stop_predictions, train_sllm
from .svae import SvaeConfig, SvaeModel, TrainConfig, mean_ce, reconstruct, train_svae
from .toy import ParagraphSet, SentenceSet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvaeRun:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int = 4
    ffn_mult: int = 4
    steps: int = 6000
    batch_size: int = 32
    base_lr: float = 2e-3
    warmup_steps: int = 400
    weight_decay: float = 0.01
    seed: int = 0
    eval_every: int = 1000

    def model_config(self, vocab_size: int) -> SvaeConfig:
        return SvaeConfig(vocab_size, self.hidden_size, self.num_layers, self.num_heads, self.ffn_mult)

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, base_lr=self.base_lr,
                           warmup_steps=self.warmup_steps, weight_decay=self.weight_decay,
                           seed=self.seed, eval_every=self.eval_every)


def fit_svae(data: SentenceSet, run: SvaeRun, on_step: Callable[[dict], None] | None = None,
             with_val: bool = True) -> tuple[SvaeModel, list[dict], float]:
    """Train on ``data.train``; returns the EMA model, the history and wall seconds."""
    start = time.perf_counter()
    model = SvaeModel(run.model_config(len(data.vocab)), np.random.default_rng(run.seed))
    res = train_svae(data.train, model.cfg, run.train_config(), val=data.val if with_val else None,
                     on_step=on_step, model=model)
    return res.ema_model(), res.history, time.perf_counter() - start


@dataclass
class RoundTrip:
    sentences: int
    exact: float
    token: float


def round_trip(seqs: Sequence[Sequence[int]], model: SvaeModel) -> RoundTrip:
    """Greedy reconstruction scored per sentence (exact) and per position (token)."""
    exact = hits = total = 0
    for s in seqs:
        out = reconstruct(s, model)
        exact += out == list(s)
        hits += sum(a == b for a, b in zip(out, s))
        total += max(len(out), len(s))
    return RoundTrip(len(seqs), exact / len(seqs), hits / total)


def depth_sweep(data: SentenceSet, run: SvaeRun, depths: Sequence[int] = (1, 2, 4)) -> dict[int, float]:
    """Held-out cross-entropy after the same budget, one model per depth."""
    out = {}
    for depth in depths:
        model, _, secs = fit_svae(data, replace(run, num_layers=depth), with_val=False)
        out[depth] = mean_ce(data.val, model)
        log.info("depth %d: val_loss %.4f (%.0fs)", depth, out[depth], secs)
    return out


# -- sentence-level model -----------------------------------------------------------


@dataclass(frozen=True)
class SllmRun:
    num_layers: int = 2
    num_heads: int = 4
    steps: int = 2000
    batch_size: int = 16
    base_lr: float = 1e-3
    warmup_steps: int = 100
    freeze_svae: bool = False
    seed: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(steps=self.steps, batch_size=self.batch_size, base_lr=self.base_lr,
                           warmup_steps=self.warmup_steps, seed=self.seed, eval_every=max(self.steps, 1))


def fit_sllm(svae: SvaeModel, data: ParagraphSet, run: SllmRun,
             on_step: Callable[[dict], None] | None = None) -> tuple[SllmModel, list[dict]]:
    cfg = SllmConfig(svae.cfg.hidden_size, run.num_layers, run.num_heads)
    model = graft(svae, cfg, freeze=run.freeze_svae, seed=run.seed)
    res = train_sllm(data.train, model, run.train_config(), on_step=on_step)
    return res.ema_model(), res.history


@dataclass
class StopScores:
    precision: float
    recall: float
    positions: int


def stop_scores(paragraphs, model: SllmModel) -> StopScores:
    pred, lab = stop_predictions(paragraphs, model)
    tp = int(((pred == STOP) & (lab == STOP)).sum())
    return StopScores(tp / max(int((pred == STOP).sum()), 1), tp / max(int((lab == STOP).sum()), 1), len(lab))


@dataclass
class GenerationReport:
    prompts: int
    stopped: int
    capped: int
    sentences: int
    valid: int
    mean_sentences: float
    samples: list[str] = field(default_factory=list)

    @property
    def valid_fraction(self) -> float:
        return self.valid / self.sentences if self.sentences else 0.0


def generation_report(model: SllmModel, data: ParagraphSet, paragraphs, keep_samples: int = 3) -> GenerationReport:
    """Generate from each paragraph's first sentence and check outputs against the grammar."""
    cap = model.cfg.max_sentences
    rep = GenerationReport(0, 0, 0, 0, 0, 0.0)
    counts = []
    for p in paragraphs:
        trace = generate_ids(p[:1], model)
        rep.prompts += 1
        rep.stopped += trace.stopped
        rep.capped += (not trace.stopped) and len(p[:1]) + trace.sentences_out >= cap
        counts.append(trace.sentences_out)
        for ids in trace.sentences:
            words = [data.vocab.token_of[i] for i in ids]
            rep.sentences += 1
            rep.valid += data.grammar.is_sentence(words)
            if len(rep.samples) < keep_samples:
                rep.samples.append(" ".join(words))
    rep.mean_sentences = float(np.mean(counts)) if counts else 0.0
    return rep


# -- counters ---------------------------------------------------------------------


def forward_ratio(paragraphs, baseline: TokenLM, sllm: SllmModel) -> tuple[float, float]:
    """Baseline-to-SLLM backbone forwards under forced replay, and the continuation's mean sentence length."""
    b = replay_corpus(paragraphs, lambda p: replay_baseline(p, baseline))
    s = replay_corpus(paragraphs, lambda p: replay_sllm(p, sllm))
    return b.backbone_forwards / s.backbone_forwards, s.tokens / s.sentences


def fit_baseline(data: ParagraphSet, hidden: int = 64, layers: int = 2, heads: int = 4, steps: int = 500,
                 seed: int = 2) -> TokenLM:
    model = TokenLM(BaselineConfig(len(data.vocab), hidden, layers, heads), seed)
    tcfg = TrainConfig(steps=steps, batch_size=16, base_lr=1e-3, warmup_steps=max(1, steps // 20), seed=seed,
                       eval_every=max(steps, 1))
    return train_baseline(data.train, model, tcfg).ema_model()

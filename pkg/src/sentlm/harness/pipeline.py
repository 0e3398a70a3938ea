"""Config-driven training, evaluation and benchmarking used by the CLI and scripts."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .. import baseline as bl
from .. import eval as ev
from .. import sllm as sl
from .. import svae as sv
from ..errors import CheckpointError, ConfigError, DataError, OverLengthError
from ..nn import Module
from ..text import Vocabulary, encode, encode_paragraph, load_paragraphs, segment, tokenize
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig
from .metrics import MetricsLog
from .seeding import component_int, component_rng

log = logging.getLogger(__name__)


# -- data ------------------------------------------------------------------------------


def file_id(path) -> str:
    """Short content hash identifying a corpus file."""
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def load_sentences(path, vocab: Vocabulary, max_tokens: int, max_sentences: int = 64) -> tuple[list[list[int]], int]:
    """Every sentence of every paragraph, with over-length ones skipped and counted."""
    out, skipped = [], 0
    for para in load_paragraphs(path, max_sentences):
        for span in segment(para):
            if not tokenize(span.text):
                continue
            try:
                out.append(encode(span, vocab, max_tokens))
            except OverLengthError:
                skipped += 1
    return out, skipped


def load_encoded_paragraphs(path, vocab: Vocabulary, max_tokens: int,
                            max_sentences: int = 64) -> tuple[list[list[list[int]]], int]:
    """Encoded paragraphs; any paragraph holding an over-length sentence is skipped."""
    out, skipped = [], 0
    for para in load_paragraphs(path, max_sentences):
        try:
            enc = encode_paragraph(para, vocab, max_tokens)
        except OverLengthError:
            skipped += 1
            continue
        if enc:
            out.append(enc)
    return out, skipped


def resolve_vocab(cfg: RunConfig) -> Vocabulary:
    if not cfg.data.vocab:
        raise ConfigError("data.vocab is required")
    vocab = Vocabulary.load(cfg.data.vocab)
    if cfg.model.vocab_size and cfg.model.vocab_size != len(vocab):
        raise ConfigError(f"model.vocab_size={cfg.model.vocab_size} but {cfg.data.vocab} holds {len(vocab)} entries")
    return vocab


# -- configs -----------------------------------------------------------------------------


def train_config(cfg: RunConfig) -> sv.TrainConfig:
    o = cfg.optimizer
    return sv.TrainConfig(
        steps=o.total_steps,
        batch_size=o.batch_size,
        base_lr=o.base_lr,
        warmup_steps=o.warmup_steps,
        weight_decay=o.weight_decay,
        clip_norm=o.clip_norm,
        ema_decay=o.ema_decay,
        gamma=o.gamma,
        seed=component_int(cfg.data.seed, "data"),
        eval_every=cfg.run.eval_every,
        accumulate=o.accumulate,
    )


def svae_config(cfg: RunConfig, vocab_size: int) -> sv.SvaeConfig:
    m = cfg.model
    return sv.SvaeConfig(vocab_size, m.hidden_size, m.layers, m.num_heads, m.ffn_mult, m.max_sentence_tokens)


def sllm_config(cfg: RunConfig) -> sl.SllmConfig:
    m = cfg.model
    return sl.SllmConfig(m.hidden_size, m.layers, m.num_heads, m.ffn_mult, m.max_paragraph_sentences,
                         cfg.run.stop_loss_weight, cfg.optimizer.gamma)


def baseline_config(cfg: RunConfig, vocab_size: int) -> bl.BaselineConfig:
    m = cfg.model
    cap = (m.max_sentence_tokens + 1) * m.max_paragraph_sentences + 1
    return bl.BaselineConfig(vocab_size, m.hidden_size, m.layers, m.num_heads, m.ffn_mult, cap, cfg.optimizer.gamma)


# -- training ------------------------------------------------------------------------------


@dataclass
class TrainOutcome:
    result: sv.TrainResult
    checkpoint: Path
    raw_checkpoint: Path
    log_path: Path | None
    skipped: int


def raw_path(out) -> Path:
    """Where the non-averaged weights go, next to the EMA checkpoint."""
    out = Path(out)
    return out.with_name(f"{out.stem}-raw{out.suffix}")


def train_from_config(cfg: RunConfig, out, log_path=None, svae_ckpt=None,
                      on_row: Callable[[dict], None] | None = None) -> TrainOutcome:
    """Train the model named by ``cfg.run.mode``.

    The EMA weights, used for evaluation, go to ``out``; the raw weights, for
    continuing training, go to ``raw_path(out)``.
    """
    cfg.validate()
    mode = cfg.run.mode
    vocab = resolve_vocab(cfg)
    if not cfg.data.train:
        raise ConfigError("data.train is required")
    tcfg = train_config(cfg)
    init = component_rng(cfg.data.seed, "init")
    m = cfg.model
    if mode == "svae":
        data, skipped = load_sentences(cfg.data.train, vocab, m.max_sentence_tokens, m.max_paragraph_sentences)
        val = load_sentences(cfg.data.val, vocab, m.max_sentence_tokens)[0] if cfg.data.val else None
        model: Module = sv.SvaeModel(svae_config(cfg, len(vocab)), init)
    else:
        data, skipped = load_encoded_paragraphs(cfg.data.train, vocab, m.max_sentence_tokens, m.max_paragraph_sentences)
        val = None
        if cfg.data.val:
            val = load_encoded_paragraphs(cfg.data.val, vocab, m.max_sentence_tokens, m.max_paragraph_sentences)[0]
        if mode == "sllm":
            if svae_ckpt is None:
                raise ConfigError("SLLM training needs a trained SVAE checkpoint")
            model = sl.graft(svae_ckpt, sllm_config(cfg), freeze=cfg.run.freeze_svae, seed=init)
            if model.svae.cfg.vocab_size != len(vocab):
                raise ConfigError("SVAE checkpoint vocabulary size differs from data.vocab")
            data = [p for p in data if len(p) >= 2]
        else:
            model = bl.TokenLM(baseline_config(cfg, len(vocab)), init)
    if not data:
        raise DataError(f"no usable training examples in {cfg.data.train}")

    metrics = MetricsLog(log_path, mode) if log_path else None

    def on_step(row):
        if metrics is not None:
            metrics.log_row(row)
        if on_row is not None:
            on_row(row)

    try:
        if mode == "svae":
            result = sv.train_svae(data, model.cfg, tcfg, val=val, on_step=on_step, model=model)
        elif mode == "sllm":
            result = sl.train_sllm(data, model, tcfg, val=val, on_step=on_step)
        else:
            result = bl.train_baseline(data, model, tcfg, val=val, on_step=on_step)
    finally:
        if metrics is not None:
            metrics.close()
    path = save_checkpoint(result.ema_model(), out, config_hash=cfg.config_hash(), step=tcfg.steps,
                           ema=True, vocab=vocab)
    raw = save_checkpoint(result.model, raw_path(out), config_hash=cfg.config_hash(), step=tcfg.steps,
                          ema=False, vocab=vocab)
    return TrainOutcome(result, path, raw, Path(log_path) if log_path else None, skipped + result.skipped)


# -- evaluation --------------------------------------------------------------------------------


def _context_totals(paragraphs) -> tuple[int, int]:
    return sum(len(s) for p in paragraphs for s in p), sum(len(p) for p in paragraphs)


def kv_per_context_token(paragraphs, num_layers: int, hidden: int, sentence_level: bool) -> float:
    T, n = _context_totals(paragraphs)
    acct = ev.account_memory(num_layers, hidden, T, n)
    return acct.sllm_per_token if sentence_level else acct.baseline_per_token


def evaluate(ckpt: Checkpoint, paragraphs: Sequence, corpus_id: str, num_prompts: int = 16,
             warmup: int = 3, max_new_tokens: int = 512) -> ev.EvalReport:
    """PPL, throughput and KV-cache figures for one checkpoint on encoded paragraphs."""
    paragraphs = [p for p in paragraphs if len(p) >= 2]
    if not paragraphs:
        raise DataError("evaluation needs paragraphs with at least two sentences")
    model = ckpt.model
    prompts = [p[:1] for p in paragraphs[:num_prompts]]
    if ckpt.kind == "sllm":
        nll, n = sl.word_nll(paragraphs, model)
        replay = ev.replay_corpus(paragraphs, lambda p: ev.replay_sllm(p, model))
        thr = ev.measure_throughput(lambda pr: sl.generate_ids(pr, model), prompts, warmup)
        kv = kv_per_context_token(paragraphs, model.cfg.num_layers, model.cfg.hidden_size, True)
    elif ckpt.kind == "baseline":
        nll, n = bl.word_nll(paragraphs, model)
        replay = ev.replay_corpus(paragraphs, lambda p: ev.replay_baseline(p, model))
        thr = ev.measure_throughput(lambda pr: bl.generate_tokens(pr[0], model, max_new_tokens), prompts, warmup)
        kv = kv_per_context_token(paragraphs, model.cfg.num_layers, model.cfg.hidden_size, False)
    else:
        raise CheckpointError("evaluation needs an sllm or baseline checkpoint")
    return ev.EvalReport(
        model_id=f"{ckpt.kind}-{model.cfg.hidden_size}-L{model.cfg.num_layers}",
        corpus_id=corpus_id,
        config_hash=ckpt.header.get("config_hash", ""),
        ppl=float(np.exp(nll / n)),
        tokens_per_second=thr.tokens_per_second,
        forwards_per_token=replay.backbone_forwards / replay.tokens,
        kv_elements_per_context_token=kv,
    )


@dataclass
class BenchResult:
    baseline: ev.EvalReport
    sllm: ev.EvalReport
    table: ev.DeltaTable
    memory: ev.MemoryAccount
    mean_sentence_length: float


def bench(baseline_ckpt: Checkpoint, sllm_ckpt: Checkpoint, corpus_path, num_prompts: int = 16,
          warmup: int = 3) -> BenchResult:
    vocab = sllm_ckpt.vocab or baseline_ckpt.vocab
    if vocab is None:
        raise CheckpointError("checkpoints carry no vocabulary")
    max_tokens = sllm_ckpt.model.svae.cfg.max_tokens
    paragraphs, _ = load_encoded_paragraphs(corpus_path, vocab, max_tokens)
    cid = file_id(corpus_path)
    base = evaluate(baseline_ckpt, paragraphs, cid, num_prompts, warmup)
    sllm = evaluate(sllm_ckpt, paragraphs, cid, num_prompts, warmup)
    usable = [p for p in paragraphs if len(p) >= 2]
    T, n = _context_totals(usable)
    svae = sllm_ckpt.model.svae
    memory = ev.account_memory(sllm_ckpt.model.cfg.num_layers, sllm_ckpt.model.cfg.hidden_size, T, n,
                               svae.cfg.max_tokens, svae.cfg.num_layers)
    return BenchResult(base, sllm, ev.compare(base, sllm), memory, ev.mean_sentence_length(usable))

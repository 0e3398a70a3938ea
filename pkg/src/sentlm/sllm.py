"""Sentence-level language model.

A decoder-only backbone without token embedding or vocabulary projection runs
over sentence vectors. Its output at the last position is either the next
sentence vector, handed to the grafted SVAE decoder, or a stop signal from a
two-way termination head.
"""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .errors import DataError, GraftError
from .nn import BlockConfig, EncoderStack, KVCache, Linear, Module, causal_mask, sinusoidal_pe
from .numerics import Tensor, concat, log_softmax, no_grad
from .svae import (
    DecodeStats,
    SvaeModel,
    _pad,
    decode_greedy,
    encode_batch,
    encode_sentence,
    focal_loss,
    reconstruction_loss,
)
from .text import MAX_PARAGRAPH_SENTENCES, Vocabulary, decode, encode, segment, tokenize

CONTINUE, STOP = 0, 1


@dataclass(frozen=True)
class SllmConfig:
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int | None = None
    ffn_mult: int = 4
    max_sentences: int = MAX_PARAGRAPH_SENTENCES
    stop_loss_weight: float = 1.0
    gamma: float = 2.0

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(self.hidden_size, self.num_layers, self.num_heads, self.ffn_mult)


class SllmModel(Module):
    def __init__(self, cfg: SllmConfig, svae: SvaeModel, rng: np.random.Generator | int = 0,
                 freeze_svae: bool = False):
        if svae.cfg.hidden_size != cfg.hidden_size:
            raise GraftError(
                f"SVAE hidden size {svae.cfg.hidden_size} does not match backbone hidden size {cfg.hidden_size}"
            )
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.backbone = EncoderStack(cfg.block, rng, final_norm=True)
        self.stop_head = Linear(cfg.hidden_size, 2, rng)
        self.svae = svae
        self.svae_frozen = False
        self.freeze(freeze_svae)

    def freeze(self, flag: bool = True) -> None:
        self.svae_frozen = flag
        self.svae.set_requires_grad(not flag)


def graft(svae, cfg: SllmConfig, freeze: bool = False, seed: int | np.random.Generator = 0) -> SllmModel:
    """Attach a trained SVAE to a freshly initialised backbone and stop head.

    ``svae`` is an ``SvaeModel`` (copied, so the source is left untouched), a
    loaded checkpoint, or a checkpoint path.
    """
    if not isinstance(svae, SvaeModel):
        from .harness.checkpoint import Checkpoint, load_checkpoint

        ckpt = svae if isinstance(svae, Checkpoint) else load_checkpoint(svae)
        if ckpt.kind != "svae":
            raise GraftError(f"grafting needs an SVAE checkpoint, got {ckpt.kind}")
        svae = ckpt.model
    return SllmModel(cfg, copy.deepcopy(svae), np.random.default_rng(seed), freeze_svae=freeze)


def _stack_omegas(omegas) -> Tensor:
    if isinstance(omegas, Tensor):
        return omegas
    omegas = list(omegas)
    if not omegas:
        raise ValueError("backbone needs at least one sentence vector")
    return concat([o.reshape(1, -1) for o in omegas], axis=0)


def backbone_forward(omegas, model: SllmModel, offset: int = 0, cache: KVCache | None = None) -> Tensor:
    """Causal backbone over sentence vectors ``[t, d]`` (or ``[B, t, d]``).

    Sentence positions get their own sinusoidal encoding. Row ``k`` is the
    prediction for sentence ``k + 1``.
    """
    x = _stack_omegas(omegas)
    t = x.shape[-2]
    if t == 0:
        raise ValueError("backbone needs at least one sentence vector")
    if offset + t > model.cfg.max_sentences:
        raise DataError(f"{offset + t} sentences exceed the cap of {model.cfg.max_sentences}")
    x = x + sinusoidal_pe(t, x.shape[-1], offset)
    return model.backbone(x, causal_mask(t, offset + t, offset), cache)


def stop_flags(h: Tensor, model: SllmModel) -> Tensor:
    """Two logits per position: index 0 continue, index 1 stop."""
    return model.stop_head(h)


def is_stop(logits_row) -> bool:
    """argmax with ties going to continue."""
    row = np.asarray(logits_row.data if isinstance(logits_row, Tensor) else logits_row)
    return bool(row[STOP] > row[CONTINUE])


class StopSignal:
    __slots__ = ()

    def __repr__(self) -> str:
        return "STOP"


STOP_SIGNAL = StopSignal()


def next_sentence(h_t: Tensor, model: SllmModel):
    """Stop signal, or ``h_t`` itself as the next sentence vector."""
    return STOP_SIGNAL if is_stop(stop_flags(h_t, model).data) else h_t


@dataclass
class GenerationTrace:
    backbone_forwards: int = 0
    decoder_steps: int = 0
    tokens_out: int = 0
    kv_elements_cached: int = 0
    sentences_out: int = 0
    decoder_kv_peak: int = 0
    stopped: bool = False
    sentences: list[list[int]] = field(default_factory=list)
    # backbone output and stop logits of every forward, for consistency checks
    hidden: list[np.ndarray] = field(default_factory=list, repr=False)
    stop_logits: list[np.ndarray] = field(default_factory=list, repr=False)

    def counts(self) -> dict:
        return {
            "backbone_forwards": self.backbone_forwards,
            "decoder_steps": self.decoder_steps,
            "tokens_out": self.tokens_out,
            "kv_elements_cached": self.kv_elements_cached,
        }

    def to_json(self) -> str:
        return json.dumps(self.counts(), sort_keys=True)


def prompt_ids(prompt: str, vocab: Vocabulary, max_tokens: int) -> list[list[int]]:
    """Segment and encode a prompt; a trailing piece without punctuation counts as a sentence."""
    if not prompt or not prompt.strip():
        raise DataError("empty prompt")
    seqs = [encode(s, vocab, max_tokens) for s in segment(prompt) if tokenize(s.text)]
    if not seqs:
        raise DataError("prompt has no tokens")
    return seqs


def generate_ids(prompt: Sequence[Sequence[int]], model: SllmModel, max_sentences: int | None = None,
                 feedback: str = "hidden") -> GenerationTrace:
    """Sentence-by-sentence generation from already-encoded prompt sentences.

    ``feedback="hidden"`` appends the backbone output itself as the next
    context vector; ``"reencode"`` re-encodes the decoded sentence instead.
    Generation ends on a stop flag or once prompt plus output reach the
    sentence cap.
    """
    if feedback not in ("hidden", "reencode"):
        raise ValueError(f"unknown feedback mode {feedback!r}")
    cap = min(max_sentences or model.cfg.max_sentences, model.cfg.max_sentences)
    trace = GenerationTrace()
    svae = model.svae
    with no_grad():
        cache = KVCache(model.cfg.num_layers)
        pending = encode_batch(prompt, svae)
        if pending.shape[0] > cap:
            raise DataError(f"prompt has {pending.shape[0]} sentences, cap is {cap}")
        # a prompt already at the cap leaves no room for another sentence
        while pending.shape[0] < cap:
            h = backbone_forward(pending, model, offset=cache.length, cache=cache)
            trace.backbone_forwards += 1
            h_t = h[-1]
            trace.hidden.append(h_t.data.copy())
            trace.stop_logits.append(stop_flags(h_t, model).data.copy())
            nxt = next_sentence(h_t, model)
            if nxt is STOP_SIGNAL:
                trace.stopped = True
                break
            stats = DecodeStats()
            ids = decode_greedy(nxt, svae, stats=stats)
            trace.decoder_steps += stats.steps
            trace.decoder_kv_peak = max(trace.decoder_kv_peak, stats.peak_cache_elements)
            trace.tokens_out += len(ids)
            trace.sentences.append(ids)
            trace.sentences_out += 1
            # the paragraph is now the cached context plus this sentence
            if cache.length + 1 >= cap:
                break
            if feedback == "reencode" and ids:
                pending = encode_sentence(ids, svae).reshape(1, -1)
            else:
                pending = nxt.reshape(1, -1)
        trace.kv_elements_cached = cache.self_elements()
    return trace


def generate(prompt: str, model: SllmModel, vocab: Vocabulary, max_sentences: int | None = None,
             feedback: str = "hidden") -> tuple[str, GenerationTrace]:
    """Continue ``prompt`` sentence by sentence; returns the continuation text and counters."""
    seqs = prompt_ids(prompt, vocab, model.svae.cfg.max_tokens)
    trace = generate_ids(seqs, model, max_sentences, feedback)
    text = " ".join(decode(ids, vocab) for ids in trace.sentences if ids)
    return text, trace


# -- training objective --------------------------------------------------------


@dataclass
class LossParts:
    recon_sum: Tensor
    recon_tokens: int
    stop_sum: Tensor
    stop_count: int
    stop_logits: Tensor
    stop_labels: np.ndarray
    stop_valid: np.ndarray

    @property
    def recon(self) -> float:
        return float(self.recon_sum.data) / max(self.recon_tokens, 1)

    @property
    def stop(self) -> float:
        return float(self.stop_sum.data) / max(self.stop_count, 1)


def stop_labels(num_sentences: int) -> list[int]:
    """Continue everywhere except the last sentence position."""
    return [CONTINUE] * (num_sentences - 1) + [STOP]


def sllm_loss_parts(paragraphs: Sequence[Sequence[Sequence[int]]], model: SllmModel) -> LossParts:
    """Teacher-forced losses for a batch of paragraphs (lists of sentence id lists).

    The backbone sees the encoded sentences of each paragraph. Position ``k``
    reconstructs sentence ``k + 1`` through the SVAE decoder and predicts
    continue; the final position predicts stop.
    """
    paragraphs = [list(p) for p in paragraphs]
    for p in paragraphs:
        if len(p) < 2:
            raise DataError("paragraph needs at least two sentences")
        if len(p) > model.cfg.max_sentences:
            raise DataError(f"paragraph has {len(p)} sentences, cap is {model.cfg.max_sentences}")
    flat = [s for p in paragraphs for s in p]
    omegas = encode_batch(flat, model.svae)
    counts = [len(p) for p in paragraphs]
    t_max = max(counts)
    d = model.cfg.hidden_size
    # scatter flat sentence vectors into a padded [B, t_max, d] layout
    slot = np.concatenate([s * t_max + np.arange(c) for s, c in enumerate(counts)])
    gather = np.full(len(paragraphs) * t_max, len(flat), dtype=np.int64)
    gather[slot] = np.arange(len(flat))
    padded = concat([omegas, Tensor(np.zeros((1, d), dtype=omegas.data.dtype))], axis=0)[gather]
    x = padded.reshape(len(paragraphs), t_max, d)
    h = backbone_forward(x, model)

    logits = stop_flags(h, model)
    labels = np.zeros((len(paragraphs), t_max), dtype=np.int64)
    valid = np.zeros((len(paragraphs), t_max), dtype=bool)
    for b, c in enumerate(counts):
        labels[b, :c] = stop_labels(c)
        valid[b, :c] = True
    stop_sum, stop_n = focal_loss(logits, labels, model.cfg.gamma, valid)

    # predictions for sentences 2..t come from positions 1..t-1
    src = np.concatenate([b * t_max + np.arange(c - 1) for b, c in enumerate(counts)])
    targets = [p[k + 1] for p in paragraphs for k in range(len(p) - 1)]
    preds = h.reshape(len(paragraphs) * t_max, d)[src]
    recon_sum, recon_n, *_ = reconstruction_loss(targets, preds, model.svae, model.cfg.gamma)
    return LossParts(recon_sum, recon_n, stop_sum, stop_n, logits, labels, valid)


def sllm_loss(paragraphs, model: SllmModel) -> tuple[Tensor, dict]:
    """Mean reconstruction focal loss plus ``stop_loss_weight`` times mean stop focal loss."""
    parts = sllm_loss_parts(paragraphs, model)
    recon = parts.recon_sum * (1.0 / max(parts.recon_tokens, 1))
    stop = parts.stop_sum * (1.0 / max(parts.stop_count, 1))
    total = recon + stop * model.cfg.stop_loss_weight if model.cfg.stop_loss_weight else recon
    return total, {"recon_loss": parts.recon, "stop_loss": parts.stop}


def stop_predictions(paragraphs, model: SllmModel) -> tuple[np.ndarray, np.ndarray]:
    """Teacher-forced stop decisions and labels over every sentence position."""
    preds, labels = [], []
    with no_grad():
        for p in paragraphs:
            omegas = encode_batch(p, model.svae)
            logits = stop_flags(backbone_forward(omegas, model), model).data
            preds.extend(int(is_stop(row)) for row in logits)
            labels.extend(stop_labels(len(p)))
    return np.array(preds), np.array(labels)


def word_nll(paragraphs, model: SllmModel) -> tuple[float, int]:
    """Summed word-level NLL (including each sentence's ``<eos>``) for sentences 2..t."""
    total, count = 0.0, 0
    with no_grad():
        for p in paragraphs:
            omegas = encode_batch(p, model.svae)
            h = backbone_forward(omegas, model)
            loss, n, *_ = reconstruction_loss(p[1:], h[: len(p) - 1], model.svae, gamma=0.0)
            total += float(loss.data)
            count += n
    return total, count


def train_sllm(
    paragraphs: Sequence[Sequence[Sequence[int]]],
    model: SllmModel,
    tcfg,
    val: Sequence[Sequence[Sequence[int]]] | None = None,
    on_step=None,
):
    """Joint training of backbone, stop head and (unless frozen) the SVAE.

    Single-sentence and over-cap paragraphs are skipped and counted.
    """
    from .svae import train_loop

    kept = [p for p in paragraphs if 2 <= len(p) <= model.cfg.max_sentences]

    def loss_fn(batch):
        total, parts = sllm_loss(batch, model)
        return total, 1, parts

    eval_fn = None
    if val:
        val = [p for p in val if 2 <= len(p) <= model.cfg.max_sentences]

        def eval_fn(m):
            nll, n = word_nll(val, m)
            return {"val_loss": nll / n, "ppl": float(np.exp(nll / n))}

    result = train_loop(model, loss_fn, kept, tcfg, eval_fn=eval_fn, on_step=on_step)
    result.skipped = len(paragraphs) - len(kept)
    return result

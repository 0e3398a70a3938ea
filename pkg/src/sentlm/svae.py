"""Sentence autoencoder: token ids -> one sentence vector -> token ids.

The encoder embeds a sentence, runs self-attention blocks, sums the hidden
rows and layer-normalises the sum. The decoder is a causal stack that
cross-attends to that single vector and is decoded greedily.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, OverLengthError
from .nn import (
    BlockConfig,
    DecoderStack,
    EncoderStack,
    KVCache,
    LayerNorm,
    Linear,
    Module,
    Parameter,
    causal_mask,
    key_padding_mask,
    sinusoidal_pe,
)
from .numerics import (
    AdamW,
    NonFiniteError,
    ScheduleConfig,
    Tensor,
    check_finite,
    clip_param_grads,
    default_dtype,
    ema_update,
    embedding,
    exp,
    getitem,
    layer_norm,
    log_softmax,
    lr_at,
    no_grad,
)
from .text import BOS, EOS, PAD, MAX_SENTENCE_TOKENS

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SvaeConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int | None = None
    ffn_mult: int = 4
    max_tokens: int = MAX_SENTENCE_TOKENS

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(self.hidden_size, self.num_layers, self.num_heads, self.ffn_mult)

    @property
    def name(self) -> str:
        return f"SVAE-{self.hidden_size}-H{self.num_layers}"


class SvaeModel(Module):
    """Encoder and decoder have their own embedding tables; nothing is tied."""

    def __init__(self, cfg: SvaeConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        d, V = cfg.hidden_size, cfg.vocab_size
        self.cfg = cfg
        self.enc_embed = Parameter(rng.normal(0.0, 1.0, (V, d)).astype(default_dtype()))
        self.encoder = EncoderStack(cfg.block, rng)
        self.fuse_norm = LayerNorm(d)
        self.dec_embed = Parameter(rng.normal(0.0, 1.0, (V, d)).astype(default_dtype()))
        self.decoder = DecoderStack(cfg.block, rng)
        self.lm_head = Linear(d, V, rng)

    def encode(self, ids) -> Tensor:
        return encode_sentence(ids, self)

    def decode(self, omega, max_len: int = MAX_SENTENCE_TOKENS) -> list[int]:
        return decode_greedy(omega, self, max_len)


def _check_len(n: int, cap: int) -> None:
    if n > cap:
        raise OverLengthError(n, cap)
    if n < 1:
        raise ValueError("empty token sequence")


def _pad(seqs: Sequence[Sequence[int]], fill: int = PAD) -> tuple[np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in seqs])
    out = np.full((len(seqs), int(lengths.max())), fill, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


def embed(ids, table: Tensor, offset: int = 0) -> Tensor:
    """Embedding rows plus sinusoidal positions; ``ids`` is ``[L]`` or ``[B, L]``."""
    ids = np.asarray(ids, dtype=np.int64)
    x = embedding(table, ids)
    return x + sinusoidal_pe(ids.shape[-1], table.shape[1], offset)


def fuse(H: Tensor, norm: LayerNorm, valid: np.ndarray | None = None) -> Tensor:
    """Sum hidden rows over the length axis, then layer-normalise.

    ``valid`` (``[B, L]`` bool) excludes padded rows from the sum.
    """
    if H.shape[-2] == 0:
        raise ValueError("cannot fuse an empty hidden sequence")
    if valid is not None:
        H = H * valid[..., None].astype(H.data.dtype)
    return norm(H.sum(axis=-2))


def encode_batch(seqs: Sequence[Sequence[int]], model: SvaeModel) -> Tensor:
    """Sentence vectors ``[B, d]`` for a ragged batch."""
    for s in seqs:
        _check_len(len(s), model.cfg.max_tokens)
    ids, lengths = _pad(seqs)
    x = embed(ids, model.enc_embed)
    mask = key_padding_mask(lengths, ids.shape[1])
    H = model.encoder(x, mask)
    valid = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    return fuse(H, model.fuse_norm, valid)


def encode_sentence(ids: Sequence[int], model: SvaeModel) -> Tensor:
    """One sentence -> its sentence vector ``[d]``."""
    _check_len(len(ids), model.cfg.max_tokens)
    H = model.encoder(embed(ids, model.enc_embed))
    return fuse(H, model.fuse_norm)


def decoder_logits(dec_in, omega: Tensor, model: SvaeModel, offset: int = 0, cache: KVCache | None = None) -> Tensor:
    """Causal decoder logits ``[..., L, V]`` given inputs starting with ``<bos>``.

    ``dec_in`` is ``[L]`` with ``omega`` ``[d]``, or ``[B, L]`` with ``[B, d]``.
    ``offset``/``cache`` support incremental decoding.
    """
    ids = np.asarray(dec_in, dtype=np.int64)
    if offset == 0 and ids.shape[-1] and np.any(ids[..., 0] != BOS):
        raise ValueError("decoder input must start with <bos>")
    if offset + ids.shape[-1] > model.cfg.max_tokens + 1:
        raise OverLengthError(offset + ids.shape[-1] - 1, model.cfg.max_tokens)
    x = embed(ids, model.dec_embed, offset)
    memory = omega.reshape(*omega.shape[:-1], 1, omega.shape[-1])
    L = ids.shape[-1]
    h = model.decoder(x, memory, causal_mask(L, offset + L, offset), cache)
    return model.lm_head(h)


def focal_loss(logits: Tensor, targets, gamma: float = 2.0, valid: np.ndarray | None = None) -> tuple[Tensor, int]:
    """Summed focal loss ``-(1 - p_t)^gamma * log p_t`` and the number of scored tokens.

    ``logits`` is ``[..., V]`` and ``targets`` matches its leading shape;
    positions where ``valid`` is false are skipped.
    """
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != logits.shape[:-1]:
        raise ValueError(f"targets {targets.shape} do not match logits {logits.shape}")
    V = logits.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= V):
        if valid is None or np.any((targets[valid] < 0) | (targets[valid] >= V)):
            raise ValueError("target id out of range")
    logp = log_softmax(logits, axis=-1)
    if valid is None:
        valid = np.ones(targets.shape, dtype=bool)
    idx = np.nonzero(valid)
    picked = getitem(logp, idx + (targets[idx],), unique=True)
    if gamma == 0:
        return -picked.sum(), int(picked.size)
    weight = (1.0 - exp(picked)) ** gamma
    return -(weight * picked).sum(), int(picked.size)


def reconstruction_loss(seqs: Sequence[Sequence[int]], omegas: Tensor, model: SvaeModel, gamma: float = 2.0):
    """Teacher-forced focal loss of rebuilding ``seqs`` from ``omegas`` (``[B, d]``).

    Returns (summed loss, token count, logits, targets, valid mask).
    """
    dec_in, _ = _pad([[BOS] + list(s) for s in seqs])
    tgt, lengths = _pad([list(s) + [EOS] for s in seqs])
    valid = np.arange(tgt.shape[1])[None, :] < lengths[:, None]
    logits = decoder_logits(dec_in, omegas, model)
    loss, n = focal_loss(logits, tgt, gamma, valid)
    return loss, n, logits, tgt, valid


def svae_loss(seqs: Sequence[Sequence[int]], model: SvaeModel, gamma: float = 2.0) -> tuple[Tensor, int]:
    omegas = encode_batch(seqs, model)
    loss, n, *_ = reconstruction_loss(seqs, omegas, model, gamma)
    return loss, n


@dataclass
class DecodeStats:
    steps: int = 0
    peak_cache_elements: int = 0


def decode_greedy(omega, model: SvaeModel, max_len: int = MAX_SENTENCE_TOKENS, stats: DecodeStats | None = None,
                  use_cache: bool = True) -> list[int]:
    """Argmax decoding from ``<bos>`` until ``<eos>`` or ``max_len`` tokens.

    Returns the generated ids without ``<bos>``/``<eos>``. With ``use_cache``
    each step feeds only the newest token and reuses cached keys/values;
    without it the whole prefix is recomputed every step.
    """
    omega = omega if isinstance(omega, Tensor) else Tensor(omega)
    stats = stats if stats is not None else DecodeStats()
    max_len = min(max_len, model.cfg.max_tokens)
    out: list[int] = []
    with no_grad():
        cache = KVCache(model.cfg.num_layers, cross=True) if use_cache else None
        prefix = [BOS]
        for _ in range(max_len + 1):
            if use_cache:
                logits = decoder_logits(prefix[-1:], omega, model, offset=len(prefix) - 1, cache=cache)
                stats.peak_cache_elements = max(stats.peak_cache_elements, cache.elements())
            else:
                logits = decoder_logits(prefix, omega, model)
            stats.steps += 1
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS:
                break
            out.append(nxt)
            prefix.append(nxt)
            if len(out) >= max_len:
                break
    return out


def reconstruct(ids: Sequence[int], model: SvaeModel) -> list[int]:
    with no_grad():
        return decode_greedy(encode_sentence(ids, model), model)


def reconstruction_accuracy(seqs: Sequence[Sequence[int]], model: SvaeModel) -> float:
    """Fraction of sentences rebuilt exactly, token for token."""
    if not seqs:
        return 0.0
    hits = sum(reconstruct(s, model) == list(s) for s in seqs)
    return hits / len(seqs)


def token_accuracy(seqs: Sequence[Sequence[int]], model: SvaeModel) -> float:
    """Share of reference tokens reproduced at the same position by a greedy round trip.

    The denominator is the longer of reference and output per sentence, so
    dropped and extra tokens both count as misses.
    """
    hits = total = 0
    for s in seqs:
        out = reconstruct(s, model)
        hits += sum(a == b for a, b in zip(out, s))
        total += max(len(out), len(s))
    return hits / total if total else 0.0


def mean_ce(seqs: Sequence[Sequence[int]], model: SvaeModel, batch_size: int = 128) -> float:
    """Mean per-token cross-entropy of teacher-forced reconstruction."""
    total, count = 0.0, 0
    with no_grad():
        for i in range(0, len(seqs), batch_size):
            loss, n = svae_loss(seqs[i : i + batch_size], model, gamma=0.0)
            total += float(loss.data)
            count += n
    return total / max(count, 1)


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 32
    base_lr: float = 3e-3
    warmup_steps: int = 100
    weight_decay: float = 0.01
    clip_norm: float = 1.0
    ema_decay: float = 0.999
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    gamma: float = 2.0
    seed: int = 0
    eval_every: int = 200
    accumulate: int = 1

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.accumulate < 1:
            raise ConfigError("steps, batch_size and accumulate must be positive")

    @property
    def schedule(self) -> ScheduleConfig:
        return ScheduleConfig(self.base_lr, self.warmup_steps, self.steps)


@dataclass
class TrainResult:
    model: Module
    ema: list[np.ndarray]
    ema_index: list[int] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)
    skipped: int = 0

    def ema_model(self) -> Module:
        """A copy of the model carrying the EMA weights, for evaluation.

        Only trained parameters have a shadow; frozen ones are copied as is.
        """
        m = copy.deepcopy(self.model)
        params = m.parameters()
        for i, s in zip(self.ema_index, self.ema):
            params[i].data = s.copy()
        return m


def train_loop(
    model: Module,
    loss_fn: Callable[[list], tuple[Tensor, int]],
    data: Sequence,
    cfg: TrainConfig,
    params: Sequence[Parameter] | None = None,
    eval_fn: Callable[[Module], dict] | None = None,
    on_step: Callable[[dict], None] | None = None,
) -> TrainResult:
    """Shared AdamW + warmup/cosine + clipping + EMA loop.

    ``loss_fn(batch)`` returns a summed loss and its token count, optionally
    followed by a dict of scalar components to log; the optimised objective is
    the per-token mean. ``params`` restricts which
    parameters are updated (all trainable ones by default). With
    ``cfg.accumulate > 1`` each step sums gradients over that many batches
    before normalising by their total token count.
    """
    rng = np.random.default_rng(cfg.seed)
    all_params = model.parameters()
    params = list(params) if params is not None else [p for p in all_params if p.requires_grad]
    opt = AdamW(params, betas=cfg.betas, eps=cfg.eps, weight_decay=cfg.weight_decay)
    ids = {id(p): i for i, p in enumerate(all_params)}
    shadow = [p.data.copy() for p in params]
    sched = cfg.schedule
    result = TrainResult(model, shadow, [ids[id(p)] for p in params])
    order = rng.permutation(len(data))
    cursor = 0
    bs = min(cfg.batch_size, len(data))
    for step in range(cfg.steps):
        lr = lr_at(step, sched)
        opt.zero_grad()
        sums, counts, extras = [], [], {}
        for _ in range(cfg.accumulate):
            if cursor + bs > len(order):
                order = rng.permutation(len(data))
                cursor = 0
            batch = [data[i] for i in order[cursor : cursor + bs]]
            cursor += bs
            loss_sum, n, *extra = loss_fn(batch)
            if extra:
                for k, v in extra[0].items():
                    extras[k] = extras.get(k, 0.0) + v / cfg.accumulate
            sums.append(loss_sum)
            counts.append(n)
        total = max(sum(counts), 1)
        value = 0.0
        for loss_sum in sums:
            part = loss_sum * (1.0 / total)
            value += float(part.data)
            if not np.isfinite(value):
                raise NonFiniteError(f"loss became {value} at step {step}")
            part.backward()
        gnorm = clip_param_grads(params, cfg.clip_norm)
        opt.step(lr)
        ema_update(shadow, params, cfg.ema_decay)
        row = {"step": step, "lr": lr, "loss": value, **extras, "grad_norm": gnorm}
        if eval_fn is not None and ((step + 1) % cfg.eval_every == 0 or step + 1 == cfg.steps):
            row.update(eval_fn(result.ema_model()))
        result.history.append(row)
        if on_step is not None:
            on_step(row)
    return result


def train_svae(
    train: Sequence[Sequence[int]],
    cfg: SvaeConfig,
    tcfg: TrainConfig,
    val: Sequence[Sequence[int]] | None = None,
    on_step: Callable[[dict], None] | None = None,
    model: SvaeModel | None = None,
) -> TrainResult:
    """Self-supervised reconstruction training; sentences over the cap are skipped."""
    kept = [list(s) for s in train if 1 <= len(s) <= cfg.max_tokens]
    skipped = len(train) - len(kept)
    if skipped:
        log.info("skipped %d over-length sentences", skipped)
    model = model or SvaeModel(cfg, np.random.default_rng(tcfg.seed))

    def loss_fn(batch):
        return svae_loss(batch, model, tcfg.gamma)

    eval_fn = None
    if val:
        def eval_fn(m):
            ce = mean_ce(val, m)
            return {"val_loss": ce, "ppl": math.exp(ce)}

    result = train_loop(model, loss_fn, kept, tcfg, eval_fn=eval_fn, on_step=on_step)
    result.skipped = skipped
    return result

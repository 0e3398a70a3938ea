"""Transformer building blocks on top of the autodiff engine.

All blocks are pre-norm with residual connections and a tanh-GELU feed-forward.
Inputs are ``[batch, length, hidden]``; 2-D inputs are treated as batch 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .numerics import Tensor, default_dtype, gelu, layer_norm, matmul, softmax, where


@dataclass(frozen=True)
class BlockConfig:
    hidden_size: int
    num_layers: int
    num_heads: int | None = None
    ffn_mult: int = 4

    def __post_init__(self):
        if self.num_heads is None:
            object.__setattr__(self, "num_heads", max(1, self.hidden_size // 64))
        if min(self.hidden_size, self.num_layers, self.num_heads, self.ffn_mult) < 1:
            raise ValueError("block config values must be >= 1")
        if self.hidden_size % self.num_heads:
            raise ValueError("hidden_size must be divisible by num_heads")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data):
        super().__init__(data, requires_grad=True)


class Module:
    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in self.__dict__.items():
            full = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def set_requires_grad(self, flag: bool) -> None:
        for p in self.parameters():
            p.requires_grad = flag

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _init(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    return rng.normal(0.0, std, size=shape).astype(default_dtype())


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        self.weight = Parameter(_init(rng, (d_in, d_out), (2.0 / (d_in + d_out)) ** 0.5))
        self.bias = Parameter(np.zeros(d_out, dtype=default_dtype())) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d, dtype=default_dtype()))
        self.beta = Parameter(np.zeros(d, dtype=default_dtype()))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


def sinusoidal_pe(length: int, d: int, offset: int = 0) -> np.ndarray:
    """``pe[pos, 2i] = sin(pos / 10000^(2i/d))``, odd columns use cos."""
    if d % 2:
        raise ValueError("sinusoidal positional encoding needs an even width")
    pos = np.arange(offset, offset + length, dtype=np.float64)[:, None]
    rates = 10000.0 ** (-np.arange(0, d, 2, dtype=np.float64) / d)
    pe = np.empty((length, d))
    pe[:, 0::2] = np.sin(pos * rates)
    pe[:, 1::2] = np.cos(pos * rates)
    return pe.astype(default_dtype())


def causal_mask(lq: int, lk: int | None = None, offset: int = 0) -> np.ndarray:
    """Boolean ``[lq, lk]`` visibility; query ``i`` sits at absolute position ``offset + i``."""
    lk = lq + offset if lk is None else lk
    return np.arange(lk)[None, :] <= (np.arange(lq)[:, None] + offset)


def key_padding_mask(lengths, max_len: int) -> np.ndarray:
    """``[batch, 1, 1, max_len]`` mask that hides padded keys."""
    lengths = np.asarray(lengths)
    return (np.arange(max_len)[None, :] < lengths[:, None])[:, None, None, :]


class LayerCache:
    """Keys and values already projected for one attention layer (inference only)."""

    def __init__(self):
        self.k: np.ndarray | None = None
        self.v: np.ndarray | None = None

    @property
    def length(self) -> int:
        return 0 if self.k is None else self.k.shape[-2]

    @property
    def elements(self) -> int:
        return 0 if self.k is None else self.k.size + self.v.size

    def append(self, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.k is None:
            self.k, self.v = k, v
        else:
            self.k = np.concatenate([self.k, k], axis=-2)
            self.v = np.concatenate([self.v, v], axis=-2)
        return self.k, self.v


class KVCache:
    """Per-layer caches for a stack; ``cross`` holds the memory K/V of decoder layers."""

    def __init__(self, num_layers: int, cross: bool = False):
        self.self_attn = [LayerCache() for _ in range(num_layers)]
        self.cross = [LayerCache() for _ in range(num_layers)] if cross else None

    @property
    def length(self) -> int:
        return self.self_attn[0].length

    def self_elements(self) -> int:
        return sum(c.elements for c in self.self_attn)

    def cross_elements(self) -> int:
        return sum(c.elements for c in self.cross) if self.cross else 0

    def elements(self) -> int:
        return self.self_elements() + self.cross_elements()


def _as3d(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 2:
        return x.reshape(1, *x.shape), True
    return x, False


class MultiHeadAttention(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        d = cfg.hidden_size
        self.num_heads = cfg.num_heads
        self.q_proj = Linear(d, d, rng)
        self.k_proj = Linear(d, d, rng)
        self.v_proj = Linear(d, d, rng)
        self.out_proj = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        h = self.num_heads
        return x.reshape(b, n, h, d // h).transpose(0, 2, 1, 3)

    def attend(self, x: Tensor, source: Tensor, mask=None, cache: LayerCache | None = None, static=False):
        """Attention of ``x`` over ``source``; returns the merged heads before ``out_proj``.

        With a cache, new keys/values are appended (``static=False``) or the
        cached memory projections are reused once filled (``static=True``).
        """
        b, lq, d = x.shape
        q = self._split(self.q_proj(x))
        if cache is not None and static and cache.k is not None:
            k, v = Tensor(cache.k, dtype=cache.k.dtype), Tensor(cache.v, dtype=cache.v.dtype)
        else:
            k = self._split(self.k_proj(source))
            v = self._split(self.v_proj(source))
            if cache is not None:
                kd, vd = cache.append(k.data, v.data)
                k, v = Tensor(kd, dtype=kd.dtype), Tensor(vd, dtype=vd.dtype)
        scale = 1.0 / np.sqrt(d // self.num_heads)
        scores = matmul(q, k.transpose(0, 1, 3, 2)) * scale
        if mask is not None:
            scores = where(mask, scores, -1e9)
        probs = softmax(scores, axis=-1)
        ctx = matmul(probs, v)
        return ctx.transpose(0, 2, 1, 3).reshape(b, lq, d)

    def forward(self, x: Tensor, mask=None, memory: Tensor | None = None, cache=None, static=False) -> Tensor:
        x, squeeze = _as3d(x)
        source = x if memory is None else _as3d(memory)[0]
        out = self.out_proj(self.attend(x, source, mask, cache, static))
        return out.reshape(out.shape[1:]) if squeeze else out


def self_attention(x: Tensor, mask, attn: MultiHeadAttention) -> Tensor:
    """Scaled dot-product multi-head self-attention (no residual, no norm)."""
    x3, _ = _as3d(x)
    if mask is not None:
        m = np.asarray(mask)
        if m.shape[-2:] != (x3.shape[1], x3.shape[1]):
            raise ValueError(f"mask shape {m.shape} does not match length {x3.shape[1]}")
    return attn(x, mask)


def cross_attention(x: Tensor, memory: Tensor, attn: MultiHeadAttention) -> Tensor:
    """Attention over exactly one memory vector per batch item."""
    mem, _ = _as3d(memory if memory.ndim > 1 else memory.reshape(1, -1))
    if mem.shape[1] != 1:
        raise ValueError(f"cross-attention memory must be a single vector, got {mem.shape[1]} rows")
    return attn(x, None, memory=mem if x.ndim == 3 else mem.reshape(mem.shape[1:]))


class FeedForward(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        d = cfg.hidden_size
        self.fc_in = Linear(d, d * cfg.ffn_mult, rng)
        self.fc_out = Linear(d * cfg.ffn_mult, d, rng)

    def forward(self, x: Tensor) -> Tensor:
        return self.fc_out(gelu(self.fc_in(x)))


class EncoderBlock(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        d = cfg.hidden_size
        self.ln_attn = LayerNorm(d)
        self.attn = MultiHeadAttention(cfg, rng)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(cfg, rng)

    def forward(self, x: Tensor, mask=None, cache: LayerCache | None = None) -> Tensor:
        x = x + self.attn(self.ln_attn(x), mask, cache=cache)
        return x + self.ffn(self.ln_ffn(x))


class DecoderBlock(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        d = cfg.hidden_size
        self.ln_self = LayerNorm(d)
        self.self_attn = MultiHeadAttention(cfg, rng)
        self.ln_cross = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(cfg, rng)
        self.ln_ffn = LayerNorm(d)
        self.ffn = FeedForward(cfg, rng)

    def forward(self, x: Tensor, memory: Tensor, mask=None, cache=None, cross_cache=None) -> Tensor:
        x = x + self.self_attn(self.ln_self(x), mask, cache=cache)
        x = x + self.cross_attn(self.ln_cross(x), None, memory=memory, cache=cross_cache, static=True)
        return x + self.ffn(self.ln_ffn(x))


class EncoderStack(Module):
    """Stack of self-attention blocks; the optional final norm is off for the SVAE encoder."""

    def __init__(self, cfg: BlockConfig, rng: np.random.Generator, final_norm: bool = False):
        self.cfg = cfg
        self.blocks = [EncoderBlock(cfg, rng) for _ in range(cfg.num_layers)]
        self.ln_final = LayerNorm(cfg.hidden_size) if final_norm else None

    def forward(self, x: Tensor, mask=None, cache: KVCache | None = None) -> Tensor:
        for i, block in enumerate(self.blocks):
            x = block(x, mask, None if cache is None else cache.self_attn[i])
        return self.ln_final(x) if self.ln_final is not None else x


class DecoderStack(Module):
    def __init__(self, cfg: BlockConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.blocks = [DecoderBlock(cfg, rng) for _ in range(cfg.num_layers)]
        self.ln_final = LayerNorm(cfg.hidden_size)

    def forward(self, x: Tensor, memory: Tensor, mask=None, cache: KVCache | None = None) -> Tensor:
        for i, block in enumerate(self.blocks):
            sc = cc = None
            if cache is not None:
                sc, cc = cache.self_attn[i], cache.cross[i]
            x = block(x, memory, mask, sc, cc)
        return self.ln_final(x)


# closed-form parameter counts, used to check the module tree

def linear_params(d_in: int, d_out: int) -> int:
    return d_in * d_out + d_out


def attention_params(d: int) -> int:
    return 4 * linear_params(d, d)


def ffn_params(d: int, mult: int = 4) -> int:
    return linear_params(d, mult * d) + linear_params(mult * d, d)


def encoder_block_params(d: int, mult: int = 4) -> int:
    return 2 * (2 * d) + attention_params(d) + ffn_params(d, mult)


def decoder_block_params(d: int, mult: int = 4) -> int:
    return 3 * (2 * d) + 2 * attention_params(d) + ffn_params(d, mult)


def zero_output_projections(module: Module) -> None:
    """Zero every attention ``out_proj`` and FFN ``fc_out`` so blocks reduce to the residual path."""
    for name, p in module.named_parameters():
        if ".out_proj." in f".{name}" or ".fc_out." in f".{name}":
            p.data[...] = 0.0


__all__ = [
    "BlockConfig",
    "DecoderBlock",
    "DecoderStack",
    "EncoderBlock",
    "EncoderStack",
    "FeedForward",
    "KVCache",
    "LayerCache",
    "LayerNorm",
    "Linear",
    "Module",
    "MultiHeadAttention",
    "Parameter",
    "causal_mask",
    "cross_attention",
    "key_padding_mask",
    "self_attention",
    "sinusoidal_pe",
]

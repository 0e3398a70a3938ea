"""Token-level decoder-only baseline with the same backbone shape as the SLLM."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .nn import BlockConfig, EncoderStack, KVCache, Linear, Module, Parameter, causal_mask
from .numerics import Tensor, default_dtype, no_grad
from .svae import _pad, embed, focal_loss
from .text import BOS, EOS

MAX_CONTEXT_TOKENS = 64 * 65


@dataclass(frozen=True)
class BaselineConfig:
    vocab_size: int
    hidden_size: int = 64
    num_layers: int = 2
    num_heads: int | None = None
    ffn_mult: int = 4
    max_tokens: int = MAX_CONTEXT_TOKENS
    gamma: float = 2.0

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(self.hidden_size, self.num_layers, self.num_heads, self.ffn_mult)


class TokenLM(Module):
    def __init__(self, cfg: BaselineConfig, rng: np.random.Generator | int = 0):
        if not isinstance(rng, np.random.Generator):
            rng = np.random.default_rng(rng)
        self.cfg = cfg
        self.embed = Parameter(rng.normal(0.0, 1.0, (cfg.vocab_size, cfg.hidden_size)).astype(default_dtype()))
        self.backbone = EncoderStack(cfg.block, rng, final_norm=True)
        self.lm_head = Linear(cfg.hidden_size, cfg.vocab_size, rng)


def paragraph_stream(paragraph: Sequence[Sequence[int]]) -> list[int]:
    """``<bos>`` + all sentence tokens + ``<eos>``."""
    return [BOS] + [t for s in paragraph for t in s] + [EOS]


def token_logits(ids, model: TokenLM, offset: int = 0, cache: KVCache | None = None) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    L = ids.shape[-1]
    if offset + L > model.cfg.max_tokens:
        raise ValueError(f"context of {offset + L} tokens exceeds {model.cfg.max_tokens}")
    x = embed(ids, model.embed, offset)
    h = model.backbone(x, causal_mask(L, offset + L, offset), cache)
    return model.lm_head(h)


def baseline_loss(paragraphs, model: TokenLM, gamma: float | None = None) -> tuple[Tensor, int]:
    gamma = model.cfg.gamma if gamma is None else gamma
    streams = [paragraph_stream(p) for p in paragraphs]
    ids, lengths = _pad([s[:-1] for s in streams])
    tgt, _ = _pad([s[1:] for s in streams])
    valid = np.arange(ids.shape[1])[None, :] < lengths[:, None]
    return focal_loss(token_logits(ids, model), tgt, gamma, valid)


def word_nll(paragraphs, model: TokenLM) -> tuple[float, int]:
    """Summed NLL over the tokens of sentences 2..t and the final ``<eos>``.

    This scores the same continuation tokens the SLLM decoder scores, minus its
    per-sentence ``<eos>`` targets.
    """
    total, count = 0.0, 0
    with no_grad():
        for p in paragraphs:
            stream = paragraph_stream(p)
            logits = token_logits(stream[:-1], model).data.astype(np.float64)
            z = logits - logits.max(-1, keepdims=True)
            logp = z - np.log(np.exp(z).sum(-1, keepdims=True))
            first = len(p[0])
            tgt = np.array(stream[1:])
            rows = np.arange(first, len(tgt))
            total -= float(logp[rows, tgt[rows]].sum())
            count += len(rows)
    return total, count


@dataclass
class TokenTrace:
    backbone_forwards: int = 0
    tokens_out: int = 0
    kv_elements_cached: int = 0
    stopped: bool = False
    tokens: list[int] = field(default_factory=list)

    def counts(self) -> dict:
        return {
            "backbone_forwards": self.backbone_forwards,
            "decoder_steps": 0,
            "tokens_out": self.tokens_out,
            "kv_elements_cached": self.kv_elements_cached,
        }


def generate_tokens(prompt: Sequence[int], model: TokenLM, max_new: int = 64 * 64) -> TokenTrace:
    """Greedy token-by-token continuation of ``<bos>`` + ``prompt`` until ``<eos>``."""
    trace = TokenTrace()
    with no_grad():
        cache = KVCache(model.cfg.num_layers)
        pending = [BOS] + list(prompt)
        while True:
            logits = token_logits(pending, model, offset=cache.length, cache=cache)
            trace.backbone_forwards += 1
            nxt = int(np.argmax(logits.data[-1]))
            if nxt == EOS:
                trace.stopped = True
                break
            trace.tokens.append(nxt)
            trace.tokens_out += 1
            if trace.tokens_out >= max_new or cache.length + 1 >= model.cfg.max_tokens:
                break
            pending = [nxt]
        trace.kv_elements_cached = cache.self_elements()
    return trace


def train_baseline(paragraphs, model: TokenLM, tcfg, val=None, on_step=None):
    """Next-token training on whole paragraphs, with the same loop as the SLLM."""
    from .svae import train_loop

    cap = model.cfg.max_tokens
    kept = [p for p in paragraphs if len(paragraph_stream(p)) - 1 <= cap]

    def loss_fn(batch):
        return baseline_loss(batch, model)

    eval_fn = None
    if val:
        def eval_fn(m):
            nll, n = word_nll(val, m)
            return {"val_loss": nll / n, "ppl": float(np.exp(nll / n))}

    result = train_loop(model, loss_fn, kept, tcfg, eval_fn=eval_fn, on_step=on_step)
    result.skipped = len(paragraphs) - len(kept)
    return result

"""AdamW, gradient clipping, warmup+cosine schedule and EMA."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimizerState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[Tensor], **kwargs) -> "OptimizerState":
        st = cls(**kwargs)
        st.m = [np.zeros_like(p.data) for p in params]
        st.v = [np.zeros_like(p.data) for p in params]
        return st


def adamw_step(
    params: Sequence[Tensor],
    grads: Sequence[np.ndarray | None],
    state: OptimizerState,
    lr: float,
) -> None:
    """One decoupled-weight-decay Adam update, in place on ``params`` and ``state``.

    A ``None`` gradient is treated as zero, so frozen or unused parameters still
    decay. Use ``skip`` masks upstream if that is not wanted.
    """
    if lr < 0:
        raise ValueError("learning rate must be non-negative")
    if len(params) != len(state.m) or len(grads) != len(params):
        raise ValueError("parameter / gradient / moment counts differ")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            g = np.zeros_like(p.data)
        if g.shape != p.data.shape or m.shape != p.data.shape:
            raise ValueError(f"shape mismatch: param {p.data.shape}, grad {g.shape}, moment {m.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        p.data *= 1.0 - lr * state.weight_decay
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.data -= (lr * update).astype(p.data.dtype, copy=False)


class AdamW:
    """Thin stateful wrapper that reads ``.grad`` off the parameters."""

    def __init__(self, params: Sequence[Tensor], betas=(0.9, 0.999), eps=1e-8, weight_decay=0.01):
        self.params = list(params)
        self.state = OptimizerState.for_params(
            self.params, beta1=betas[0], beta2=betas[1], eps=eps, weight_decay=weight_decay
        )

    def step(self, lr: float) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def global_grad_norm(grads: Sequence[np.ndarray | None]) -> float:
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.sum(np.asarray(g, dtype=np.float64) ** 2))
    return math.sqrt(total)


def clip_grad_l2(grads: list[np.ndarray | None], max_norm: float) -> list[np.ndarray | None]:
    """Scale all gradients by ``max_norm / norm`` when the global L2 norm exceeds it."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_grad_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return [None if g is None else (g * scale).astype(g.dtype, copy=False) for g in grads]


def clip_param_grads(params: Sequence[Tensor], max_norm: float) -> float:
    """In-place variant over ``.grad`` slots; returns the pre-clip norm."""
    grads = [p.grad for p in params]
    norm = global_grad_norm(grads)
    clipped = clip_grad_l2(grads, max_norm)
    for p, g in zip(params, clipped):
        p.grad = g
    return norm


@dataclass(frozen=True)
class ScheduleConfig:
    base_lr: float
    warmup_steps: int
    total_steps: int

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ValueError("base_lr must be positive")
        if not 0 < self.warmup_steps < self.total_steps:
            raise ValueError("need 0 < warmup_steps < total_steps")


def lr_at(step: int, cfg: ScheduleConfig) -> float:
    """Linear warmup from 0, then cosine annealing to 0 at ``total_steps``."""
    if not 0 <= step <= cfg.total_steps:
        raise ValueError(f"step {step} outside [0, {cfg.total_steps}]")
    if step < cfg.warmup_steps:
        return cfg.base_lr * step / cfg.warmup_steps
    frac = (step - cfg.warmup_steps) / (cfg.total_steps - cfg.warmup_steps)
    return cfg.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def ema_update(shadow: list[np.ndarray], params: Sequence, decay: float) -> list[np.ndarray]:
    """``shadow <- decay * shadow + (1 - decay) * params``, in place."""
    if not 0.0 <= decay <= 1.0:
        raise ValueError("decay must lie in [0, 1]")
    if len(shadow) != len(params):
        raise ValueError("shadow / parameter counts differ")
    for s, p in zip(shadow, params):
        pd = p.data if isinstance(p, Tensor) else np.asarray(p)
        if s.shape != pd.shape:
            raise ValueError(f"shape mismatch {s.shape} vs {pd.shape}")
        s *= decay
        s += (1.0 - decay) * pd
    return shadow

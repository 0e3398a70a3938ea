"""Central finite differences, for checking analytic gradients in float64."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-5) -> np.ndarray:
    out = np.zeros_like(param.data, dtype=np.float64)
    flat = param.data.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn().data)
            flat[i] = orig - h
            fm = float(fn().data)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * h)
    return out


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-5) -> float:
    """Worst-case relative error, with an absolute floor for near-zero entries."""
    num = np.abs(analytic - numeric)
    den = np.maximum(np.abs(analytic) + np.abs(numeric), floor)
    return float(np.max(num / den)) if num.size else 0.0


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[Tensor],
    h: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Return the largest relative error between backward() and finite differences.

    ``max_entries`` samples that many coordinates per parameter instead of all
    of them, which keeps whole-model checks fast.
    """
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    worst = 0.0
    for p in params:
        analytic = np.zeros_like(p.data, dtype=np.float64) if p.grad is None else p.grad.astype(np.float64)
        if max_entries is None or p.data.size <= max_entries:
            numeric = numeric_grad(fn, p, h)
            worst = max(worst, max_rel_error(analytic, numeric))
            continue
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(p.data.size, size=max_entries, replace=False)
        flat = p.data.reshape(-1)
        a = analytic.reshape(-1)[idx]
        n = np.empty(len(idx))
        with no_grad():
            for k, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn().data)
                flat[i] = orig - h
                fm = float(fn().data)
                flat[i] = orig
                n[k] = (fp - fm) / (2 * h)
        worst = max(worst, max_rel_error(a, n))
    return worst

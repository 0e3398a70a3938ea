import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sentlm.numerics import (
    GraphError,
    NonFiniteError,
    OptimizerState,
    ScheduleConfig,
    Tensor,
    adamw_step,
    check_gradients,
    clip_grad_l2,
    concat,
    ema_update,
    embedding,
    exp,
    gelu,
    getitem,
    global_grad_norm,
    layer_norm,
    log,
    log_softmax,
    lr_at,
    matmul,
    power,
    precision,
    softmax,
    stack,
    tmean,
    transpose,
    tsum,
    where,
)

from conftest import SEEDS

TOL = 1e-4


def _param(rng, *shape, positive=False):
    x = rng.normal(size=shape)
    if positive:
        x = np.abs(x) + 0.5
    return Tensor(x, requires_grad=True)


# Each case builds (loss_fn, params) from an rng. The loss is a weighted sum so
# every output element gets a distinct upstream gradient.
def _weighted(out: Tensor, rng) -> Tensor:
    w = Tensor(rng.normal(size=out.shape))
    return tsum(out * w)


CASES = {
    "add": lambda r: ((a := _param(r, 3, 4)), (b := _param(r, 4)), lambda w: _weighted(a + b, w)),
    "sub": lambda r: ((a := _param(r, 3, 4)), (b := _param(r, 3, 1)), lambda w: _weighted(a - b, w)),
    "mul": lambda r: ((a := _param(r, 2, 3)), (b := _param(r, 2, 3)), lambda w: _weighted(a * b, w)),
    "div": lambda r: ((a := _param(r, 2, 3)), (b := _param(r, 3, positive=True)), lambda w: _weighted(a / b, w)),
    "power": lambda r: ((a := _param(r, 5, positive=True)), None, lambda w: _weighted(power(a, 1.5), w)),
    "square": lambda r: ((a := _param(r, 5)), None, lambda w: _weighted(a ** 2, w)),
    "exp": lambda r: ((a := _param(r, 4)), None, lambda w: _weighted(exp(a), w)),
    "log": lambda r: ((a := _param(r, 4, positive=True)), None, lambda w: _weighted(log(a), w)),
    "gelu": lambda r: ((a := _param(r, 6)), None, lambda w: _weighted(gelu(a), w)),
    "where": lambda r: ((a := _param(r, 3, 3)), None,
                        lambda w: _weighted(where(np.tril(np.ones((3, 3), bool)), a, -5.0), w)),
    "sum_axis": lambda r: ((a := _param(r, 3, 4)), None, lambda w: _weighted(tsum(a, axis=0), w)),
    "mean_keepdims": lambda r: ((a := _param(r, 3, 4)), None, lambda w: _weighted(tmean(a, axis=1, keepdims=True), w)),
    "reshape": lambda r: ((a := _param(r, 2, 6)), None, lambda w: _weighted(a.reshape(3, 4), w)),
    "transpose": lambda r: ((a := _param(r, 2, 3, 4)), None, lambda w: _weighted(transpose(a, (2, 0, 1)), w)),
    "getitem_rows": lambda r: ((a := _param(r, 5, 3)), None, lambda w: _weighted(getitem(a, np.array([4, 0, 4, 2])), w)),
    "getitem_unique": lambda r: ((a := _param(r, 4, 3)), None,
                                 lambda w: _weighted(getitem(a, (np.arange(4), np.array([2, 0, 1, 1])), unique=True), w)),
    "embedding": lambda r: ((a := _param(r, 6, 3)), None, lambda w: _weighted(embedding(a, np.array([[1, 5, 1], [0, 1, 3]])), w)),
    "concat": lambda r: ((a := _param(r, 2, 3)), (b := _param(r, 1, 3)), lambda w: _weighted(concat([a, b], 0), w)),
    "stack": lambda r: ((a := _param(r, 2, 3)), (b := _param(r, 2, 3)), lambda w: _weighted(stack([a, b], 1), w)),
    "matmul_2d": lambda r: ((a := _param(r, 3, 4)), (b := _param(r, 4, 2)), lambda w: _weighted(matmul(a, b), w)),
    "matmul_weight": lambda r: ((a := _param(r, 2, 3, 4)), (b := _param(r, 4, 5)), lambda w: _weighted(a @ b, w)),
    "matmul_batched": lambda r: ((a := _param(r, 2, 2, 3, 4)), (b := _param(r, 2, 2, 4, 3)), lambda w: _weighted(a @ b, w)),
    "softmax": lambda r: ((a := _param(r, 3, 5)), None, lambda w: _weighted(softmax(a), w)),
    "log_softmax": lambda r: ((a := _param(r, 3, 5)), None, lambda w: _weighted(log_softmax(a, axis=0), w)),
    "layer_norm": lambda r: ((a := _param(r, 3, 6)), (g := _param(r, 6)),
                             lambda w: _weighted(layer_norm(a, g, Tensor(np.zeros(6), requires_grad=True)), w)),
}


@pytest.mark.parametrize("name", sorted(CASES))
@pytest.mark.parametrize("seed", SEEDS)
def test_op_gradients_match_finite_differences(name, seed, f64):
    rng = np.random.default_rng(seed)
    a, b, build = CASES[name](rng)
    wrng_state = rng.bit_generator.state

    def loss():
        r = np.random.default_rng()
        r.bit_generator.state = wrng_state
        return build(r)

    params = [p for p in (a, b) if p is not None]
    assert check_gradients(loss, params) <= TOL


def test_layer_norm_beta_gradient(f64):
    rng = np.random.default_rng(0)
    x = _param(rng, 4, 5)
    g, b = _param(rng, 5), _param(rng, 5)
    w = Tensor(rng.normal(size=(4, 5)))
    assert check_gradients(lambda: tsum(layer_norm(x, g, b) * w), [x, g, b]) <= TOL


def test_mlp_gradients(f64):
    for seed in SEEDS:
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(5, 4)))
        w1, b1, w2, b2 = _param(rng, 4, 8), _param(rng, 8), _param(rng, 8, 3), _param(rng, 3)
        y = np.array([0, 2, 1, 1, 0])

        def loss():
            h = gelu(x @ w1 + b1)
            lp = log_softmax(h @ w2 + b2)
            return -tsum(getitem(lp, (np.arange(5), y), unique=True))

        assert check_gradients(loss, [w1, b1, w2, b2]) <= TOL


# -- backward ----------------------------------------------------------------------


def test_backward_linear_sum():
    x = Tensor(np.ones(3), requires_grad=True)
    tsum(x).backward()
    np.testing.assert_array_equal(x.grad, [1, 1, 1])


def test_backward_square():
    x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
    tsum(x * x).backward()
    np.testing.assert_allclose(x.grad, [4.0, -2.0])


def test_backward_accumulates_shared_use():
    x = Tensor(np.array([3.0]), requires_grad=True)
    tsum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_backward_rejects_non_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GraphError):
        (x * 2.0).backward()


def test_backward_rejects_detached():
    with pytest.raises(GraphError):
        tsum(Tensor(np.ones(3))).backward()


def test_backward_twice_raises():
    x = Tensor(np.ones(3), requires_grad=True)
    loss = tsum(x * x)
    loss.backward()
    with pytest.raises(GraphError):
        loss.backward()


def test_non_finite_input_to_softmax_raises():
    with pytest.raises(NonFiniteError):
        softmax(Tensor(np.array([0.0, np.nan])))


def test_default_dtype_is_float32_and_precision_switches():
    assert Tensor(np.ones(2)).data.dtype == np.float32
    with precision(np.float64):
        assert Tensor(np.ones(2)).data.dtype == np.float64
    assert Tensor(np.ones(2)).data.dtype == np.float32


# -- softmax and layer norm ---------------------------------------------------------------

finite_rows = arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 8)),
                     elements=st.floats(-30, 30, allow_nan=False))


def test_softmax_examples(f64):
    np.testing.assert_allclose(softmax(Tensor(np.zeros(3))).data, [1 / 3] * 3, atol=1e-12)
    np.testing.assert_allclose(softmax(Tensor(np.array([1.0, 2.0, 3.0]))).data,
                               [0.09003, 0.24473, 0.66524], atol=1e-5)


@given(finite_rows, st.floats(-100, 100))
def test_softmax_normalised_and_shift_invariant(x, c):
    with precision(np.float64):
        p = softmax(Tensor(x)).data
        q = softmax(Tensor(x + c)).data
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-7)
    np.testing.assert_allclose(p, q, atol=1e-7)


@given(finite_rows)
def test_log_softmax_matches_log_of_softmax(x):
    with precision(np.float64):
        np.testing.assert_allclose(log_softmax(Tensor(x)).data, np.log(softmax(Tensor(x)).data), atol=1e-9)


def test_layer_norm_examples(f64):
    one, zero = Tensor(np.ones(4)), Tensor(np.zeros(4))
    np.testing.assert_allclose(layer_norm(Tensor(np.full(4, 5.0)), one, zero).data, 0.0, atol=1e-12)
    out = layer_norm(Tensor(np.array([1.0, -1.0])), Tensor(np.ones(2)), Tensor(np.zeros(2)), eps=1e-12).data
    np.testing.assert_allclose(out, [1.0, -1.0], atol=1e-9)
    x = np.array([1.0, 2.0, 3.0])
    expected = [(v - 2.0) / math.sqrt(2.0 / 3.0 + 1e-5) for v in x]
    out = layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5).data
    np.testing.assert_allclose(out, expected, rtol=1e-12)


@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(2, 16)),
              elements=st.floats(-50, 50, allow_nan=False)))
def test_layer_norm_moments(x):
    spread = x.std(-1)
    x = x[spread > 1e-2]
    if x.size == 0:
        return
    d = x.shape[-1]
    with precision(np.float64):
        y = layer_norm(Tensor(x), Tensor(np.ones(d)), Tensor(np.zeros(d)), eps=1e-12).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-6)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)


def test_layer_norm_rejects_empty_last_dim():
    with pytest.raises(ValueError):
        layer_norm(Tensor(np.zeros((2, 0))), Tensor(np.zeros(0)), Tensor(np.zeros(0)))


# -- optimiser ------------------------------------------------------------------------------


def _adamw_oracle(p, g_seq, lr, b1=0.9, b2=0.999, eps=1e-8, wd=0.01):
    """Scalar-loop reference implementation."""
    p = [float(v) for v in p]
    m = [0.0] * len(p)
    v = [0.0] * len(p)
    for t, g in enumerate(g_seq, start=1):
        for i in range(len(p)):
            m[i] = b1 * m[i] + (1 - b1) * g[i]
            v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i]
            p[i] -= lr * wd * p[i]
            p[i] -= lr * (m[i] / (1 - b1**t)) / (math.sqrt(v[i] / (1 - b2**t)) + eps)
    return p


@pytest.mark.parametrize("seed", SEEDS)
def test_adamw_matches_scalar_oracle(seed, f64):
    rng = np.random.default_rng(seed)
    p0 = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(4)]
    p = Tensor(p0.copy(), requires_grad=True)
    st_ = OptimizerState.for_params([p])
    for g in grads:
        adamw_step([p], [g], st_, 0.01)
    np.testing.assert_allclose(p.data, _adamw_oracle(p0, grads, 0.01), rtol=1e-12)
    assert st_.step == 4


def test_adamw_zero_lr_keeps_params_but_moves_moments(f64):
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    st_ = OptimizerState.for_params([p])
    adamw_step([p], [np.array([0.5, -0.5])], st_, 0.0)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])
    np.testing.assert_allclose(st_.m[0], [0.05, -0.05])


def test_adamw_first_step_is_about_lr(f64):
    p = Tensor(np.array([0.0]), requires_grad=True)
    st_ = OptimizerState.for_params([p], weight_decay=0.0)
    adamw_step([p], [np.array([3.0])], st_, 0.1)
    np.testing.assert_allclose(p.data, [-0.1], rtol=1e-6)


def test_adamw_decay_only(f64):
    p = Tensor(np.array([1.0]), requires_grad=True)
    st_ = OptimizerState.for_params([p], weight_decay=0.01)
    adamw_step([p], [np.array([0.0])], st_, 0.1)
    np.testing.assert_allclose(p.data, [0.999], rtol=1e-12)


def test_adamw_shape_mismatch():
    p = Tensor(np.zeros(3), requires_grad=True)
    with pytest.raises(ValueError):
        adamw_step([p], [np.zeros(2)], OptimizerState.for_params([p]), 0.1)


def test_clip_examples():
    g = [np.array([0.3, 0.4])]
    assert clip_grad_l2(g, 1.0)[0] is g[0]
    np.testing.assert_allclose(clip_grad_l2([np.array([3.0, 4.0])], 1.0)[0], [0.6, 0.8])


@given(st.lists(arrays(np.float64, st.integers(1, 5), elements=st.floats(-10, 10)), min_size=1, max_size=4),
       st.floats(0.01, 5.0))
def test_clip_norm_and_idempotence(grads, max_norm):
    pre = global_grad_norm(grads)
    once = clip_grad_l2(grads, max_norm)
    assert abs(global_grad_norm(once) - min(pre, max_norm)) <= 1e-6 * max(1.0, pre)
    twice = clip_grad_l2(once, max_norm)
    for a, b in zip(once, twice):
        np.testing.assert_allclose(a, b, rtol=1e-12)


def test_schedule_examples():
    cfg = ScheduleConfig(1e-3, 10, 110)
    assert lr_at(0, cfg) == 0.0
    assert lr_at(10, cfg) == pytest.approx(1e-3)
    assert lr_at(60, cfg) == pytest.approx(5e-4)
    assert lr_at(110, cfg) == pytest.approx(0.0, abs=1e-18)
    with pytest.raises(ValueError):
        lr_at(111, cfg)


@given(st.integers(1, 50), st.integers(1, 200))
def test_schedule_shape(warmup, extra):
    cfg = ScheduleConfig(0.5, warmup, warmup + extra)
    lrs = [lr_at(s, cfg) for s in range(cfg.total_steps + 1)]
    peak = lrs[warmup]
    assert peak == pytest.approx(0.5)
    assert all(a <= b for a, b in zip(lrs[: warmup + 1], lrs[1 : warmup + 1]))
    assert all(a >= b - 1e-15 for a, b in zip(lrs[warmup:], lrs[warmup + 1 :]))


@pytest.mark.parametrize("bad", [(0.0, 1, 2), (1.0, 0, 2), (1.0, 2, 2)])
def test_schedule_config_validation(bad):
    with pytest.raises(ValueError):
        ScheduleConfig(*bad)


def test_ema_examples():
    s = [np.zeros(2)]
    ema_update(s, [np.ones(2)], 0.9)
    ema_update(s, [np.ones(2)], 0.9)
    np.testing.assert_allclose(s[0], 0.19)
    s = [np.full(2, 3.0)]
    ema_update(s, [np.ones(2)], 1.0)
    np.testing.assert_array_equal(s[0], 3.0)
    ema_update(s, [np.ones(2)], 0.0)
    np.testing.assert_array_equal(s[0], 1.0)
    with pytest.raises(ValueError):
        ema_update(s, [np.ones(3)], 0.5)

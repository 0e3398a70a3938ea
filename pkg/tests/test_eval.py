import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sentlm.baseline import BaselineConfig, TokenLM
from sentlm.eval import (
    EvalReport,
    account_memory,
    compare,
    kv_elements,
    mean_sentence_length,
    measure_throughput,
    nll_terms,
    pct_delta,
    perplexity,
    replay_baseline,
    replay_corpus,
    replay_sllm,
)
from sentlm.sllm import SllmConfig, SllmModel, word_nll
from sentlm.svae import SvaeConfig, SvaeModel


def _oracle_ppl(logits, targets):
    total = 0.0
    for row, t in zip(logits, targets):
        row = [float(v) for v in row]
        m = max(row)
        lse = m + math.log(sum(math.exp(v - m) for v in row))
        total += lse - row[t]
    return math.exp(total / len(targets))


def test_uniform_and_perfect():
    assert perplexity(np.zeros((7, 50)), np.arange(7) % 50) == pytest.approx(50.0, abs=1e-9)
    logits = np.full((4, 10), -1e4)
    logits[np.arange(4), [1, 2, 3, 4]] = 0.0
    assert perplexity(logits, [1, 2, 3, 4]) == pytest.approx(1.0, abs=1e-9)


def test_probability_example():
    p = np.array([0.5, 0.25, 0.125])
    logits = np.log(np.stack([[q, 1 - q] for q in p]))
    assert perplexity(logits, [0, 0, 0]) == pytest.approx(4.0, abs=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 12), st.integers(2, 30))
def test_matches_scalar_oracle(seed, n, v):
    rng = np.random.default_rng(seed)
    logits = rng.normal(0, 3, (n, v))
    targets = rng.integers(0, v, n)
    assert perplexity(logits, targets) == pytest.approx(_oracle_ppl(logits, targets), rel=1e-9)


def test_chunked_stream_equals_concatenation():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(3, 5)), rng.normal(size=(4, 5))
    ta, tb = [0, 1, 2], [4, 3, 2, 1]
    joined = perplexity(np.concatenate([a, b]), ta + tb)
    assert perplexity([a, b], [ta, tb]) == pytest.approx(joined, rel=1e-12)
    with pytest.raises(ValueError):
        perplexity([], [])


def test_nll_terms_shift_invariant():
    x = np.random.default_rng(1).normal(size=(3, 6))
    np.testing.assert_allclose(nll_terms(x, [0, 1, 2]), nll_terms(x + 100.0, [0, 1, 2]), atol=1e-10)


# -- memory ----------------------------------------------------------------


def test_memory_examples():
    a = account_memory(2, 64, 100, 100)
    assert a.ratio == 1.0
    b = account_memory(2, 64, 100, 10)
    assert b.ratio == pytest.approx(0.1, abs=1e-12)
    assert b.baseline_elements == 100 * 2 * 2 * 64
    assert b.baseline_per_token == 2 * 2 * 64
    assert b.kb_per_token(b.baseline_per_token) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        account_memory(2, 64, 0, 1)


@given(st.integers(1, 8), st.integers(1, 64), st.integers(1, 500), st.integers(1, 500))
def test_memory_ratio_is_n_over_t(layers, d, T, n):
    assert account_memory(layers, d, T, n).ratio == pytest.approx(n / T, rel=1e-12)
    assert kv_elements(T, layers, d) == T * 2 * layers * d


def test_decoder_transient_reported_separately():
    a = account_memory(2, 8, 50, 5, max_sentence_tokens=64, decoder_layers=2)
    assert a.decoder_transient_elements == kv_elements(65, 2, 8) + kv_elements(1, 2, 8)
    assert a.ratio == pytest.approx(0.1)


# -- throughput ----------------------------------------------------------------


class _Trace:
    def __init__(self, n):
        self.n = n

    def counts(self):
        return {"tokens_out": self.n, "backbone_forwards": self.n + 1, "decoder_steps": 0}


def test_throughput_counters_and_clock():
    calls = []
    ticks = iter([10.0, 12.0])
    out = measure_throughput(lambda p: calls.append(p) or _Trace(p), [3, 5], warmup=2, clock=lambda: next(ticks))
    assert calls == [3, 3, 3, 5]
    assert out.tokens == 8 and out.backbone_forwards == 10 and out.seconds == 2.0
    assert out.tokens_per_second == 4.0
    with pytest.raises(ValueError):
        measure_throughput(lambda p: _Trace(1), [])


# -- reports -----------------------------------------------------------------------


def _report(**kw):
    base = dict(model_id="m", corpus_id="c", config_hash="h", ppl=2.0, tokens_per_second=100.0,
                forwards_per_token=1.0, kv_elements_per_context_token=256.0)
    base.update(kw)
    return EvalReport(**base)


def test_report_json_round_trip_and_validation():
    r = _report()
    assert EvalReport.from_json(r.to_json()) == r
    with pytest.raises(ValueError):
        _report(ppl=0.5)
    with pytest.raises(ValueError):
        _report(forwards_per_token=-1.0)


def test_compare():
    same = compare(_report(), _report())
    assert [row.delta_pct for row in same.rows] == [0.0, 0.0, 0.0]
    t = compare(_report(), _report(forwards_per_token=0.1, kv_elements_per_context_token=25.6))
    by = {row.metric: row for row in t.rows}
    assert by["KV/tok"].delta_pct == pytest.approx(-90.0)
    assert by["tok/fwd"].delta_pct == pytest.approx(900.0)
    assert t.to_csv().splitlines()[0] == "metric,baseline,sllm,delta_pct"
    assert "-90.0%" in t.to_text()
    with pytest.raises(ValueError):
        compare(_report(), _report(corpus_id="other"))
    assert pct_delta(0.0, 0.0) == 0.0


# -- forced replay -------------------------------------------------------------------

PARAS = [[[4, 5, 6, 7], [8, 9, 10], [5, 6, 7, 8, 9]], [[4, 4], [11, 10, 9, 8]], [[5]]]


def _models():
    svae = SvaeModel(SvaeConfig(12, 8, 1, 2, ffn_mult=2), 0)
    sllm = SllmModel(SllmConfig(8, 2, 2, ffn_mult=2), svae, 1)
    base = TokenLM(BaselineConfig(12, 8, 2, 2, ffn_mult=2), 2)
    return base, sllm


def test_replay_counters():
    base, sllm = _models()
    b = replay_corpus(PARAS, lambda p: replay_baseline(p, base))
    s = replay_corpus(PARAS, lambda p: replay_sllm(p, sllm))
    cont_tokens = 3 + 5 + 4
    assert b.tokens == s.tokens == cont_tokens
    assert b.backbone_forwards == cont_tokens
    assert s.backbone_forwards == s.sentences == 3
    assert s.decoder_forwards == cont_tokens + 3
    assert b.backbone_forwards / s.backbone_forwards == pytest.approx(cont_tokens / 3)
    # replayed NLL equals the parallel teacher-forced NLL
    nll, n = word_nll([p for p in PARAS if len(p) > 1], sllm)
    assert s.nll_tokens == n and s.nll == pytest.approx(nll, rel=1e-5)


def test_mean_sentence_length():
    assert mean_sentence_length(PARAS) == pytest.approx(19 / 6)

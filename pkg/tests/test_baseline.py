import numpy as np
import pytest

from sentlm.baseline import (
    BaselineConfig,
    TokenLM,
    baseline_loss,
    generate_tokens,
    paragraph_stream,
    token_logits,
    train_baseline,
    word_nll,
)
from sentlm.nn import KVCache
from sentlm.numerics import check_gradients
from sentlm.svae import TrainConfig
from sentlm.text import BOS, EOS

PARAS = [[[4, 5, 6], [7, 8]], [[9, 10], [4, 4, 5, 11], [6]]]


def small(seed=0, **kw):
    return TokenLM(BaselineConfig(12, 8, 2, 2, ffn_mult=2, **kw), seed)


def test_stream():
    assert paragraph_stream(PARAS[0]) == [BOS, 4, 5, 6, 7, 8, EOS]


def test_cached_logits_match_full_pass(f64):
    m = small()
    ids = paragraph_stream(PARAS[1])
    full = token_logits(ids, m).data
    cache = KVCache(2)
    rows = [token_logits(ids[:3], m, cache=cache).data]
    for k in range(3, len(ids)):
        rows.append(token_logits([ids[k]], m, offset=cache.length, cache=cache).data)
    np.testing.assert_allclose(np.concatenate(rows), full, atol=1e-10)


def test_context_cap():
    m = small(max_tokens=4)
    with pytest.raises(ValueError):
        token_logits([1, 2, 3, 4, 5], m)
    trace = generate_tokens([4, 5], m, max_new=100)
    assert trace.tokens_out <= 2 and trace.backbone_forwards == trace.tokens_out + trace.stopped


@pytest.mark.parametrize("seed", (0, 1, 2))
def test_loss_gradients(seed, f64):
    m = small(seed)
    assert check_gradients(lambda: baseline_loss(PARAS, m)[0], m.parameters(), max_entries=10,
                           rng=np.random.default_rng(seed)) <= 1e-4


def test_generation_stops_on_eos():
    m = small()
    m.lm_head.weight.data[...] = 0.0
    m.lm_head.bias.data[:] = 0.0
    m.lm_head.bias.data[EOS] = 5.0
    trace = generate_tokens([4], m)
    assert trace.stopped and trace.tokens_out == 0 and trace.backbone_forwards == 1


def test_generation_one_forward_per_token():
    m = small()
    m.lm_head.weight.data[...] = 0.0
    m.lm_head.bias.data[:] = 0.0
    m.lm_head.bias.data[7] = 5.0
    trace = generate_tokens([4], m, max_new=5)
    assert trace.tokens == [7] * 5 and trace.backbone_forwards == 5
    assert trace.kv_elements_cached == 6 * 2 * 2 * 8


def test_word_nll_scores_continuation_and_final_eos():
    _, n = word_nll(PARAS, small())
    assert n == (2 + 1) + (5 + 1)


def test_training_reduces_loss():
    m = small()
    before = float(baseline_loss(PARAS, m)[0].data)
    train_baseline(PARAS, m, TrainConfig(steps=30, batch_size=2, warmup_steps=3, base_lr=1e-2))
    assert float(baseline_loss(PARAS, m)[0].data) < before

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sentlm.nn import (
    BlockConfig,
    DecoderBlock,
    DecoderStack,
    EncoderBlock,
    EncoderStack,
    KVCache,
    MultiHeadAttention,
    causal_mask,
    cross_attention,
    decoder_block_params,
    encoder_block_params,
    self_attention,
    sinusoidal_pe,
    zero_output_projections,
)
from sentlm.numerics import Tensor, check_gradients, precision, tsum

from conftest import SEEDS


def test_block_config_defaults_and_validation():
    assert BlockConfig(768, 4).num_heads == 12
    assert BlockConfig(64, 2).num_heads == 1
    with pytest.raises(ValueError):
        BlockConfig(64, 2, num_heads=3)
    with pytest.raises(ValueError):
        BlockConfig(64, 0)


def test_sinusoidal_pe_examples():
    pe = sinusoidal_pe(5, 8)
    np.testing.assert_allclose(pe[0], [0, 1] * 4)
    assert pe[1, 0] == pytest.approx(0.84147, abs=1e-5)
    with pytest.raises(ValueError):
        sinusoidal_pe(3, 7)


@given(st.integers(1, 40), st.sampled_from([2, 8, 64]), st.integers(0, 100))
def test_sinusoidal_pe_range_and_offset(length, d, offset):
    pe = sinusoidal_pe(length, d, offset)
    assert np.all(np.abs(pe) <= 1.0)
    full = sinusoidal_pe(offset + length, d)
    np.testing.assert_allclose(pe, full[offset:], atol=1e-6)


def test_causal_mask_is_lower_triangular():
    np.testing.assert_array_equal(causal_mask(4), np.tril(np.ones((4, 4), bool)))
    # one new query at absolute position 3 sees all 4 keys
    np.testing.assert_array_equal(causal_mask(1, 4, offset=3), np.ones((1, 4), bool))


def _attn(d=8, heads=2, seed=0):
    return MultiHeadAttention(BlockConfig(d, 1, heads), np.random.default_rng(seed))


def test_single_token_self_attention_is_value_projection(f64):
    attn = _attn()
    x = Tensor(np.random.default_rng(1).normal(size=(1, 8)))
    out = self_attention(x, causal_mask(1), attn).data
    expected = attn.out_proj(attn.v_proj(x)).data
    np.testing.assert_allclose(out, expected, atol=1e-12)


@pytest.mark.parametrize("seed", SEEDS)
def test_causal_self_attention_does_not_leak(seed, f64):
    attn = _attn(seed=seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 8))
    base = self_attention(Tensor(x), causal_mask(6), attn).data
    for j in range(1, 6):
        y = x.copy()
        y[j:] += rng.normal(size=y[j:].shape)
        out = self_attention(Tensor(y), causal_mask(6), attn).data
        np.testing.assert_allclose(out[:j], base[:j], atol=1e-7)


def test_identical_rows_give_identical_outputs(f64):
    attn = _attn()
    x = np.tile(np.random.default_rng(2).normal(size=(1, 8)), (5, 1))
    out = self_attention(Tensor(x), np.ones((5, 5), bool), attn).data
    np.testing.assert_allclose(out, np.tile(out[:1], (5, 1)), atol=1e-12)


def test_self_attention_mask_shape_checked():
    with pytest.raises(ValueError):
        self_attention(Tensor(np.zeros((3, 8))), np.ones((2, 2), bool), _attn())


def test_cross_attention_is_query_invariant(f64):
    attn = _attn()
    rng = np.random.default_rng(3)
    mem = Tensor(rng.normal(size=(1, 8)))
    a = cross_attention(Tensor(rng.normal(size=(4, 8))), mem, attn).data
    b = cross_attention(Tensor(rng.normal(size=(4, 8))), mem, attn).data
    np.testing.assert_allclose(a, b, atol=1e-6)
    expected = attn.out_proj(attn.v_proj(mem)).data
    np.testing.assert_allclose(a, np.tile(expected, (4, 1)), atol=1e-12)


def test_cross_attention_zero_memory_zero_bias(f64):
    attn = _attn()
    x = Tensor(np.random.default_rng(4).normal(size=(3, 8)))
    ctx = attn.attend(x.reshape(1, 3, 8), Tensor(np.zeros((1, 1, 8)))).data
    np.testing.assert_allclose(ctx, 0.0, atol=1e-15)


def test_cross_attention_rejects_multi_row_memory():
    with pytest.raises(ValueError):
        cross_attention(Tensor(np.zeros((3, 8))), Tensor(np.zeros((2, 8))), _attn())


def test_zeroed_output_projections_make_blocks_identity(f64):
    cfg = BlockConfig(8, 1, 2)
    rng = np.random.default_rng(5)
    x = Tensor(rng.normal(size=(2, 4, 8)))
    enc, dec = EncoderBlock(cfg, rng), DecoderBlock(cfg, rng)
    zero_output_projections(enc)
    zero_output_projections(dec)
    np.testing.assert_array_equal(enc(x, causal_mask(4)).data, x.data)
    mem = Tensor(rng.normal(size=(2, 1, 8)))
    np.testing.assert_array_equal(dec(x, mem, causal_mask(4)).data, x.data)


@pytest.mark.parametrize("seed", SEEDS)
def test_block_gradients(seed, f64):
    cfg = BlockConfig(8, 1, 2, ffn_mult=2)
    rng = np.random.default_rng(seed)
    enc, dec = EncoderBlock(cfg, rng), DecoderBlock(cfg, rng)
    x = Tensor(rng.normal(size=(3, 8)), requires_grad=True)
    mem = Tensor(rng.normal(size=(1, 8)), requires_grad=True)
    w = Tensor(rng.normal(size=(3, 8)))

    def loss():
        return tsum(dec(enc(x, causal_mask(3)), mem, causal_mask(3)) * w)

    params = [x, mem] + enc.parameters() + dec.parameters()
    assert check_gradients(loss, params) <= 1e-4


@given(st.sampled_from([8, 16, 64]), st.sampled_from([1, 2, 4]), st.integers(1, 4))
def test_parameter_counts_match_formulas(d, layers, mult):
    with precision(np.float32):
        cfg = BlockConfig(d, layers, 1, mult)
        rng = np.random.default_rng(0)
        enc = EncoderStack(cfg, rng)
        dec = DecoderStack(cfg, rng)
    assert enc.num_parameters() == layers * encoder_block_params(d, mult)
    assert dec.num_parameters() == layers * decoder_block_params(d, mult) + 2 * d
    assert encoder_block_params(d, 4) == 12 * d * d + 13 * d
    assert decoder_block_params(d, 4) == 16 * d * d + 19 * d


def test_depth_changes_parameter_count_by_block_delta():
    rng = np.random.default_rng(0)
    h1 = DecoderStack(BlockConfig(16, 1, 1), rng).num_parameters()
    h4 = DecoderStack(BlockConfig(16, 4, 1), rng).num_parameters()
    assert h4 - h1 == 3 * decoder_block_params(16)


@pytest.mark.parametrize("seed", SEEDS)
def test_cached_incremental_stack_matches_full_pass(seed, f64):
    cfg = BlockConfig(8, 2, 2)
    rng = np.random.default_rng(seed)
    stack = EncoderStack(cfg, rng, final_norm=True)
    x = rng.normal(size=(1, 5, 8))
    full = stack(Tensor(x), causal_mask(5)).data
    cache = KVCache(2)
    rows = []
    for i in range(5):
        rows.append(stack(Tensor(x[:, i : i + 1]), causal_mask(1, i + 1, i), cache).data)
    np.testing.assert_allclose(np.concatenate(rows, axis=1), full, atol=1e-10)
    assert cache.self_elements() == 5 * 2 * 2 * 8

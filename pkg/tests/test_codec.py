import math

import hypothesis.strategies as st
import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis.extra.numpy import arrays

from nqkv.codec import (
    Codebook,
    QuantizedBlock,
    build_nf_codebook,
    build_uniform_codebook,
    decode_tensor,
    dequantize_block,
    encode_tensor,
    get_codebook,
    normal_quantile,
    pack_indices,
    quantize_block,
    unpack_indices,
)
from nqkv.errors import ConfigurationError, CorruptionError, DataError, DomainError

from oracles import (
    encode_decode_unblocked,
    expected_absmax_mse,
    nearest_index_bruteforce,
    nf_codebook_mp,
    quantile_by_bisection,
)

NF4 = build_nf_codebook(4)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


# normal_quantile


def test_quantile_median():
    assert normal_quantile(0.5) == 0.0


def test_quantile_975_against_bisection():
    expected = quantile_by_bisection(0.975)
    assert abs(expected - 1.959964) < 1e-5
    assert normal_quantile(0.975) == pytest.approx(expected, abs=1e-8)
    assert normal_quantile(0.025) == pytest.approx(-1.959964, abs=1e-5)


@given(st.floats(1e-12, 1 - 1e-12))
def test_quantile_matches_bisection(p):
    assert normal_quantile(p) == pytest.approx(quantile_by_bisection(p), abs=1e-8)


# p >= 0.5 keeps 1 - p exact, so any asymmetry would be the function's
@given(st.floats(0.5, 1 - 1e-12))
def test_quantile_antisymmetric(p):
    assert normal_quantile(1 - p) == pytest.approx(-normal_quantile(p), abs=1e-8)


@pytest.mark.parametrize("p", [0.0, 1.0, -0.1, 1.5, float("nan")])
def test_quantile_domain(p):
    with pytest.raises(DomainError):
        normal_quantile(p)


# codebook construction


@pytest.mark.parametrize("bits", range(2, 9))
def test_nf_codebook_invariants(bits):
    cb = build_nf_codebook(bits)
    cps = cb.codepoints
    assert len(cps) == 2**bits
    assert all(b > a for a, b in zip(cps, cps[1:]))
    assert cps[0] == -1.0 and cps[-1] == 1.0
    assert cps.count(0.0) == 1
    assert cps[cb.zero_index] == 0.0


@pytest.mark.parametrize("bits", [2, 3, 4, 5, 8])
def test_nf_codebook_matches_high_precision_oracle(bits):
    np.testing.assert_allclose(build_nf_codebook(bits).codepoints, nf_codebook_mp(bits), rtol=0, atol=1e-6)


def test_nf4_layout():
    # 7 negative levels, zero at index 7, 8 positive levels
    assert NF4.zero_index == 7
    assert sum(c < 0 for c in NF4.codepoints) == 7


def test_nf2():
    cps = build_nf_codebook(2).codepoints
    assert len(cps) == 4 and {-1.0, 0.0, 1.0} <= set(cps)


@pytest.mark.parametrize("bits", [1, 9, 0, 4.0])
def test_codebook_bits_domain(bits):
    with pytest.raises(DomainError):
        build_nf_codebook(bits)


def test_get_codebook():
    assert get_codebook("nf4") == NF4
    assert get_codebook("uniform4").codepoints == tuple(np.linspace(-1, 1, 16))
    with pytest.raises(ConfigurationError):
        get_codebook("fp4")


# quantize_block / dequantize_block


@given(st.floats(1e-3, 1e3))
def test_grid_fixed_point(s):
    values = [s * c for c in NF4.codepoints]
    qb = quantize_block(values, NF4)
    assert qb.indices == tuple(range(16))
    np.testing.assert_allclose(dequantize_block(qb, NF4), values, rtol=1e-7)


def test_grid_fixed_point_exact_for_float32_scale():
    s = 0.75  # exactly representable, so the round trip is exact
    values = [s * c for c in NF4.codepoints]
    assert list(dequantize_block(quantize_block(values, NF4), NF4)) == values


def test_zero_block():
    qb = quantize_block(np.zeros(8), NF4)
    assert qb.scale == 0.0
    assert set(qb.indices) == {NF4.zero_index}
    assert np.all(dequantize_block(qb, NF4) == 0.0)


def test_quantize_block_matches_bruteforce_argmin():
    x = np.random.default_rng(0).standard_normal(256)
    qb = quantize_block(x, NF4)
    scale = float(np.float32(np.abs(x).max()))
    assert qb.scale == scale
    assert list(qb.indices) == [nearest_index_bruteforce(v / scale, NF4.codepoints) for v in x]


def test_tie_breaks_to_lower_index():
    cb = Codebook(2, (-1.0, -0.5, 0.5, 1.0), "halves")
    # 0.0 is equidistant from -0.5/0.5, 0.75 from 0.5/1.0
    qb = quantize_block([1.0, 0.0, 0.75, -0.75], cb)
    assert qb.indices == (3, 1, 2, 0)


@pytest.mark.parametrize("bad", [[], [1.0, float("nan")], [float("inf")]])
def test_quantize_block_errors(bad):
    with pytest.raises((DataError, DomainError)):
        quantize_block(bad, NF4)


def test_dequantize_block_examples():
    assert list(dequantize_block(QuantizedBlock(0.0, (3, 15, 0)), NF4)) == [0.0, 0.0, 0.0]
    assert list(dequantize_block(QuantizedBlock(2.0, (15,)), NF4)) == [2.0]
    with pytest.raises(CorruptionError):
        dequantize_block(QuantizedBlock(1.0, (16,)), NF4)


@pytest.mark.parametrize("seed", range(20))
def test_requantize_idempotent(seed):
    x = np.random.default_rng(seed).standard_normal(64) * (seed + 1)
    qb = quantize_block(x, NF4)
    again = quantize_block(dequantize_block(qb, NF4), NF4)
    assert again == qb


@given(arrays(np.float64, st.integers(1, 300), elements=finite))
@settings(max_examples=200)
def test_round_trip_bound_and_fixed_point(x):
    # below float32 range the stored scale flushes to zero
    assume(np.abs(x).max() == 0 or np.abs(x).max() > 1e-30)
    qb = quantize_block(x, NF4)
    y = dequantize_block(qb, NF4)
    bound = qb.scale * NF4.max_gap / 2
    assert np.all(np.abs(x - y) <= bound * (1 + 1e-12) + 1e-300)
    assert quantize_block(y, NF4) == qb


@given(st.lists(finite, min_size=2, max_size=64), st.floats(0.1, 10))
def test_monotone_encoding_at_fixed_scale(vals, scale):
    # pin the scale by adding an element of magnitude `scale` bigger than the rest
    top = scale * (1 + max(abs(v) for v in vals))
    xs = sorted(vals)
    idx = quantize_block(xs + [top], NF4).indices[:-1]
    assert list(idx) == sorted(idx)


# packing


@given(arrays(np.uint8, st.tuples(st.integers(1, 5), st.integers(1, 20).map(lambda n: 2 * n)), elements=st.integers(0, 15)))
def test_pack_unpack_bijection(idx):
    packed = pack_indices(idx)
    assert packed.shape == (idx.shape[0], idx.shape[1] // 2)
    np.testing.assert_array_equal(unpack_indices(packed, idx.shape[1]), idx)
    np.testing.assert_array_equal(pack_indices(unpack_indices(packed, idx.shape[1])), packed)


def test_nibble_order():
    packed = pack_indices(np.array([[1, 2, 3]], dtype=np.uint8), pad_index=7)
    assert packed.tolist() == [[0x21, 0x73]]


# encode_tensor / decode_tensor


def test_encode_1024x24_in_blocks_of_6():
    m = np.random.default_rng(1).standard_normal((1024, 24))
    qt = encode_tensor(m, 6, NF4)
    assert qt.blocks_per_row == 4
    assert qt.scales.size == 4096
    assert qt.packed.shape == (1024, 12)


def test_single_block_matches_quantize_block():
    row = np.random.default_rng(2).standard_normal(32)
    qt = encode_tensor(row[None, :], 32, NF4)
    qb = quantize_block(row, NF4)
    assert float(qt.scales[0, 0]) == qb.scale
    assert tuple(qt.indices()[0]) == qb.indices


def test_ragged_blocks_match_unblocked_oracle():
    m = np.random.default_rng(3).standard_normal((2, 10))
    qt = encode_tensor(m, 4, NF4)
    assert qt.scales.shape == (2, 3)
    out = decode_tensor(qt, NF4)
    np.testing.assert_array_equal(out, encode_decode_unblocked(m, 4, NF4.codepoints, NF4.zero_index))


def test_odd_width_padding_uses_zero_index():
    qt = encode_tensor(np.ones((3, 5)), 5, NF4)
    assert qt.packed.shape == (3, 3)
    assert np.all(qt.packed[:, -1] >> 4 == NF4.zero_index)
    assert decode_tensor(qt, NF4).shape == (3, 5)


def test_decode_error_bound_and_zero():
    rng = np.random.default_rng(4)
    m = rng.standard_normal((16, 100)) * 3
    qt = encode_tensor(m, 32, NF4)
    err = np.abs(decode_tensor(qt, NF4) - m).max()
    assert err <= float(qt.scales.max()) * NF4.max_gap / 2
    assert np.all(decode_tensor(encode_tensor(np.zeros((4, 7)), 3, NF4), NF4) == 0.0)


def test_decode_rejects_other_codebook():
    qt = encode_tensor(np.ones((1, 4)), 4, NF4)
    with pytest.raises(ConfigurationError):
        decode_tensor(qt, build_uniform_codebook(4))


def test_encode_rejects_non_finite_and_wide_codebooks():
    with pytest.raises(DataError):
        encode_tensor(np.array([[1.0, np.nan]]), 2, NF4)
    with pytest.raises(ConfigurationError):
        encode_tensor(np.ones((1, 4)), 4, build_nf_codebook(5))


def test_decode_detects_out_of_range_indices_for_small_codebook():
    cb = build_nf_codebook(2)
    qt = encode_tensor(np.ones((1, 2)), 2, cb)
    bad = type(qt)(1, 2, 2, 2, "nf2", qt.scales, np.array([[0xFF]], dtype=np.uint8))
    with pytest.raises(CorruptionError):
        decode_tensor(bad, cb)


def test_rmse_matches_integrated_expectation():
    expected_rmse = math.sqrt(expected_absmax_mse(NF4.codepoints, 256))
    m = np.random.default_rng(5).standard_normal((64, 512))
    err = decode_tensor(encode_tensor(m, 256, NF4), NF4) - m
    rmse = math.sqrt(np.mean(err**2))
    assert rmse == pytest.approx(expected_rmse, rel=0.05)


def test_integrated_expectation_agrees_with_monte_carlo():
    # cross-check the analytic oracle itself against brute force
    rng = np.random.default_rng(6)
    blocks = rng.standard_normal((400, 64))
    sim = encode_decode_unblocked(blocks, 64, NF4.codepoints, NF4.zero_index)
    mc = np.mean((sim - blocks) ** 2)
    assert mc == pytest.approx(expected_absmax_mse(NF4.codepoints, 64), rel=0.05)

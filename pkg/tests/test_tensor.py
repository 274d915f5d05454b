import numpy as np
import pytest

from tinyreid.tensor import (FixedPointMultiplier, QuantParams,
                             compute_fixed_point, compute_fixed_point_vec,
                             dequantize_affine, l2_normalize, quantize_affine,
                             requantize, requantize_per_channel, rescale_int,
                             round_half_away)


def test_round_half_away_ties():
    assert round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5, -2.5])).tolist() == \
        [1, 2, 3, -1, -2, -3]


def test_quantize_exact_grid_point():
    assert quantize_affine(1.0, QuantParams(scale=0.5, zero_point=0)) == 2


def test_quantize_zero_maps_to_zero_point():
    assert quantize_affine(0.0, QuantParams(scale=0.37, zero_point=5)) == 5


def test_quantize_saturates():
    assert quantize_affine(200.0, QuantParams(scale=0.5, zero_point=0)) == 127
    assert quantize_affine(-200.0, QuantParams(scale=0.5, zero_point=0)) == -128


def test_dequantize_formula():
    assert dequantize_affine(10, QuantParams(scale=0.1, zero_point=2)) == pytest.approx(0.8)
    assert dequantize_affine(7, QuantParams(scale=123.0, zero_point=7)) == 0.0


def test_roundtrip_error_bounded():
    rng = np.random.default_rng(0)
    for _ in range(20):
        scale = float(rng.uniform(0.001, 0.5))
        zp = int(rng.integers(-128, 128))
        q = QuantParams(scale=scale, zero_point=zp)
        lo, hi = dequantize_affine(-128, q), dequantize_affine(127, q)
        x = rng.uniform(lo, hi, size=50)
        back = dequantize_affine(quantize_affine(x, q), q)
        assert np.all(np.abs(back - x) <= scale / 2 + 1e-12)


def test_quantize_monotone():
    rng = np.random.default_rng(1)
    q = QuantParams(scale=0.033, zero_point=17)
    x = np.sort(rng.uniform(-30, 30, size=500))
    v = quantize_affine(x, q).astype(np.int32)
    assert np.all(np.diff(v) >= 0)


def test_quant_params_validation():
    with pytest.raises(ValueError):
        QuantParams(scale=0.0)
    with pytest.raises(ValueError):
        QuantParams(scale=-1.0)
    with pytest.raises(ValueError):
        QuantParams(scale=np.array([0.1, 0.2]), zero_point=3)
    with pytest.raises(ValueError):
        QuantParams(scale=1.0, zero_point=400)


def test_fixed_point_powers_of_two():
    assert compute_fixed_point(0.5) == FixedPointMultiplier(mantissa=2**30, shift=0)
    assert compute_fixed_point(1.0) == FixedPointMultiplier(mantissa=2**30, shift=1)


def test_fixed_point_reconstruction():
    for m in (0.3, 0.0012, 0.9999, 17.5, 1e-6):
        fpm = compute_fixed_point(m)
        assert 2**30 <= fpm.mantissa < 2**31
        assert abs(fpm.value() - m) / m < 2.0**-30


def test_fixed_point_rejects_bad_input():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            compute_fixed_point(bad)


def test_fixed_point_vec_matches_scalar():
    ms = np.array([0.5, 0.3, 1.0, 0.007, 42.0])
    mant, shift = compute_fixed_point_vec(ms)
    for i, m in enumerate(ms):
        fpm = compute_fixed_point(float(m))
        assert mant[i] == fpm.mantissa and shift[i] == fpm.shift


def test_requantize_exact_halving():
    fpm = compute_fixed_point(0.5)
    assert requantize(100, fpm, 0) == 50


def test_requantize_tie_rounds_away_from_zero():
    fpm = compute_fixed_point(0.5)
    assert requantize(3, fpm, 0) == 2
    assert requantize(-3, fpm, 0) == -2


def test_requantize_matches_float_reference():
    rng = np.random.default_rng(42)
    info = np.iinfo(np.int32)
    for _ in range(1000):
        acc = int(rng.integers(info.min, info.max, dtype=np.int64))
        m = float(rng.uniform(1e-6, 1.0))
        zp = int(rng.integers(-128, 128))
        got = int(requantize(acc, compute_fixed_point(m), zp))
        ref = int(np.clip(round_half_away(acc * m) + zp, -128, 127))
        assert abs(got - ref) <= 1


def test_requantize_per_channel_matches_scalar():
    rng = np.random.default_rng(5)
    acc = rng.integers(-(2**20), 2**20, size=(3, 3, 4)).astype(np.int32)
    ms = rng.uniform(1e-4, 2.0, size=4)
    mant, shift = compute_fixed_point_vec(ms)
    out = requantize_per_channel(acc, mant, shift, out_zp=7)
    for c in range(4):
        fpm = compute_fixed_point(float(ms[c]))
        ref = requantize(acc[..., c], fpm, 7)
        assert np.array_equal(out[..., c], ref)


def test_rescale_int_extreme_shifts():
    # Tiny multiplier: everything rounds to zero.
    fpm = compute_fixed_point(2.0**-40)
    assert requantize(1000, fpm, 0) == 0
    # Large multiplier: saturates instead of overflowing.
    fpm = compute_fixed_point(65536.0)
    assert requantize(10**6, fpm, 0) == 127
    assert requantize(-(10**6), fpm, 0) == -128


def test_requantize_int32_boundaries():
    info = np.iinfo(np.int32)
    for acc in (info.min, info.min + 1, info.max, info.max - 1):
        for m in (1e-9, 0.5, 1.0 - 2.0**-30, 0.9999999):
            got = int(requantize(acc, compute_fixed_point(m), 0))
            ref = int(np.clip(round_half_away(acc * m), -128, 127))
            assert abs(got - ref) <= 1, (acc, m)


def test_l2_normalize_345():
    out = l2_normalize(np.array([3.0, 4.0], dtype=np.float32))
    assert np.allclose(out, [0.6, 0.8], atol=1e-7)


def test_l2_normalize_unit_vector_fixed_point():
    v = np.array([1.0, 0.0, 0.0], dtype=np.float32)
    assert np.array_equal(l2_normalize(v), v)


def test_l2_normalize_zero_guard():
    assert np.array_equal(l2_normalize(np.zeros(5, dtype=np.float32)), np.zeros(5))


def test_l2_normalize_idempotent():
    rng = np.random.default_rng(9)
    for _ in range(50):
        v = rng.normal(size=16).astype(np.float32) * rng.uniform(0.01, 100)
        once = l2_normalize(v)
        twice = l2_normalize(once)
        assert abs(float(np.linalg.norm(once)) - 1.0) < 1e-6
        assert np.all(np.abs(twice - once) < 1e-6)

"""Convolution kernels against naive loop oracles, plus backend agreement."""

import numpy as np
import pytest

from oracles import naive_conv2d, naive_depthwise

from tinyreid import kernels
from tinyreid.kernels import numba_impl, numpy_impl
from tinyreid.kernels.numpy_impl import same_padding


def test_same_padding_shapes():
    assert same_padding(64, 3, 2) == (32, 0, 1)
    assert same_padding(64, 3, 1) == (64, 1, 1)
    assert same_padding(5, 3, 2) == (3, 1, 1)


def test_scalar_multiply():
    x = np.array([[[2.0]]], dtype=np.float32)
    k = np.array([[[[3.0]]]], dtype=np.float32)
    out = kernels.conv2d_f32(x, k, bias=np.array([0.0], dtype=np.float32))
    assert out.shape == (1, 1, 1) and out[0, 0, 0] == 6.0


def test_full_overlap_sum():
    x = np.ones((3, 3, 1), dtype=np.float32)
    k = np.ones((3, 3, 1, 1), dtype=np.float32)
    out = kernels.conv2d_f32(x, k, stride=1)
    assert out[1, 1, 0] == 9.0


def test_conv_vs_naive_oracle():
    rng = np.random.default_rng(123)
    x = rng.uniform(-1, 1, size=(5, 5, 3)).astype(np.float32)
    k = rng.uniform(-1, 1, size=(3, 3, 3, 4)).astype(np.float32)
    for stride in (1, 2):
        got = kernels.conv2d_f32(x, k, stride=stride)
        ref = naive_conv2d(x, k, stride)
        assert np.abs(got - ref).max() <= 1e-5


def test_conv_random_shapes_vs_oracle():
    rng = np.random.default_rng(7)
    for _ in range(25):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        cin, cout = int(rng.integers(1, 5)), int(rng.integers(1, 5))
        ks = int(rng.choice([1, 3]))
        stride = int(rng.choice([1, 2]))
        x = rng.uniform(-2, 2, size=(h, w, cin)).astype(np.float32)
        k = rng.uniform(-2, 2, size=(ks, ks, cin, cout)).astype(np.float32)
        assert np.abs(kernels.conv2d_f32(x, k, stride=stride)
                      - naive_conv2d(x, k, stride)).max() <= 1e-5


def test_depthwise_c1_equals_conv():
    rng = np.random.default_rng(5)
    x = rng.uniform(-1, 1, size=(6, 6, 1)).astype(np.float32)
    k = rng.uniform(-1, 1, size=(3, 3, 1)).astype(np.float32)
    dw = kernels.depthwise_conv_f32(x, k)
    cv = kernels.conv2d_f32(x, k[..., None])
    assert np.abs(dw - cv).max() <= 1e-6


def test_depthwise_delta_kernel_identity():
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, size=(7, 5, 4)).astype(np.float32)
    k = np.zeros((3, 3, 4), dtype=np.float32)
    k[1, 1, :] = 1.0
    assert np.array_equal(kernels.depthwise_conv_f32(x, k, stride=1), x)


def test_depthwise_vs_naive_oracle():
    rng = np.random.default_rng(8)
    for stride in (1, 2):
        x = rng.uniform(-1, 1, size=(6, 7, 5)).astype(np.float32)
        k = rng.uniform(-1, 1, size=(3, 3, 5)).astype(np.float32)
        assert np.abs(kernels.depthwise_conv_f32(x, k, stride=stride)
                      - naive_depthwise(x, k, stride)).max() <= 1e-5


def test_shape_mismatch_raises():
    x = np.zeros((4, 4, 3), dtype=np.float32)
    with pytest.raises(ValueError):
        kernels.conv2d_f32(x, np.zeros((3, 3, 2, 4), dtype=np.float32))
    with pytest.raises(ValueError):
        kernels.depthwise_conv_f32(x, np.zeros((3, 3, 2), dtype=np.float32))


def test_int8_accumulators_exact():
    rng = np.random.default_rng(10)
    x = rng.integers(-128, 128, size=(6, 6, 3)).astype(np.int8)
    k = rng.integers(-128, 128, size=(3, 3, 3, 4)).astype(np.int8)
    zp = -7
    for stride in (1, 2):
        got = kernels.conv2d_i8_acc(x, zp, k, stride=stride)
        ref = naive_conv2d(x.astype(np.float64) - zp, k.astype(np.float64), stride)
        assert got.dtype == np.int32
        assert np.array_equal(got, ref.astype(np.int64))


def test_backends_bitwise_identical_int8():
    rng = np.random.default_rng(11)
    x = rng.integers(-128, 128, size=(9, 11, 6)).astype(np.int8)
    k = rng.integers(-128, 128, size=(3, 3, 6, 5)).astype(np.int8)
    dk = rng.integers(-128, 128, size=(3, 3, 6)).astype(np.int8)
    for stride in (1, 2):
        assert np.array_equal(numpy_impl.conv2d_i8(x, 4, k, stride),
                              numba_impl.conv2d_i8(x, 4, k, stride))
        assert np.array_equal(numpy_impl.depthwise_conv_i8(x, -9, dk, stride),
                              numba_impl.depthwise_conv_i8(x, -9, dk, stride))


def test_backends_close_f32():
    rng = np.random.default_rng(12)
    x = rng.uniform(-1, 1, size=(9, 11, 6)).astype(np.float32)
    k = rng.uniform(-1, 1, size=(3, 3, 6, 5)).astype(np.float32)
    a = numpy_impl.conv2d_f32(x, k, 1)
    b = numba_impl.conv2d_f32(x, k, 1)
    assert np.abs(a - b).max() <= 1e-5


def test_acc64_flag():
    rng = np.random.default_rng(13)
    x = rng.uniform(-1, 1, size=(5, 5, 3)).astype(np.float32)
    k = rng.uniform(-1, 1, size=(3, 3, 3, 2)).astype(np.float32)
    out = kernels.conv2d_f32(x, k, acc64=True)
    assert out.dtype == np.float32
    assert np.abs(out - naive_conv2d(x, k, 1)).max() <= 1e-6

"""Pure-numpy convolution kernels.

Reference path used when numba is unavailable or disabled via
``TINYREID_NUMBA=0``.  The int8 kernels accumulate exactly in int32, so
their results are bit-identical to the numba implementations.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def same_padding(size: int, k: int, stride: int) -> tuple[int, int, int]:
    """(out_size, pad_begin, pad_end) for 'same' padding: out = ceil(in/stride),
    with any odd padding byte going to the end."""
    out = -(-size // stride)
    total = max((out - 1) * stride + k - size, 0)
    beg = total // 2
    return out, beg, total - beg


def conv2d_f32(x: np.ndarray, k: np.ndarray, stride: int = 1) -> np.ndarray:
    kh, kw, cin, cout = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"kernel expects {cin} input channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    # Accumulates in float64 when handed float64 inputs (verification path).
    out = np.zeros((oh, ow, cout), dtype=np.result_type(x.dtype, np.float32))
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[dy : dy + (oh - 1) * stride + 1 : stride,
                       dx : dx + (ow - 1) * stride + 1 : stride]
            out += patch @ k[dy, dx]
    return out


def depthwise_conv_f32(x: np.ndarray, k: np.ndarray, stride: int = 1) -> np.ndarray:
    kh, kw, cin = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"depthwise kernel expects {cin} channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    out = np.zeros((oh, ow, cin), dtype=np.result_type(x.dtype, np.float32))
    for dy in range(kh):
        for dx in range(kw):
            patch = xp[dy : dy + (oh - 1) * stride + 1 : stride,
                       dx : dx + (ow - 1) * stride + 1 : stride]
            out += patch * k[dy, dx]
    return out


def conv2d_i8(x: np.ndarray, in_zp: int, k: np.ndarray, stride: int = 1) -> np.ndarray:
    """int8 conv with zero-point handling; returns raw int32 accumulators."""
    kh, kw, cin, cout = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"kernel expects {cin} input channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    # Padding with in_zp contributes exactly zero once the offset is removed.
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=in_zp)
    xi = xp.astype(np.int32) - in_zp
    ki = k.astype(np.int32)
    out = np.zeros((oh, ow, cout), dtype=np.int32)
    for dy in range(kh):
        for dx in range(kw):
            patch = xi[dy : dy + (oh - 1) * stride + 1 : stride,
                       dx : dx + (ow - 1) * stride + 1 : stride]
            out += patch @ ki[dy, dx]
    return out


def depthwise_conv_i8(x: np.ndarray, in_zp: int, k: np.ndarray, stride: int = 1) -> np.ndarray:
    kh, kw, cin = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"depthwise kernel expects {cin} channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=in_zp)
    xi = xp.astype(np.int32) - in_zp
    ki = k.astype(np.int32)
    out = np.zeros((oh, ow, cin), dtype=np.int32)
    for dy in range(kh):
        for dx in range(kw):
            patch = xi[dy : dy + (oh - 1) * stride + 1 : stride,
                       dx : dx + (ow - 1) * stride + 1 : stride]
            out += patch * ki[dy, dx]
    return out

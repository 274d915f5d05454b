"""Numba-jitted convolution kernels (default backend).

Same contracts as numpy_impl; padding and shape checks stay in Python,
the inner loops run under @njit.  Integer kernels accumulate in int32 and
therefore match numpy_impl bit for bit.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .numpy_impl import same_padding

BACKEND = "numba"


@njit(cache=True)
def _conv2d_f32(xp, k, stride, oh, ow):
    kh, kw, cin, cout = k.shape
    out = np.zeros((oh, ow, cout), dtype=np.float32)
    for oy in range(oh):
        for ox in range(ow):
            for dy in range(kh):
                for dx in range(kw):
                    iy = oy * stride + dy
                    ix = ox * stride + dx
                    for ci in range(cin):
                        v = xp[iy, ix, ci]
                        if v != 0.0:
                            for co in range(cout):
                                out[oy, ox, co] += v * k[dy, dx, ci, co]
    return out


@njit(cache=True)
def _depthwise_f32(xp, k, stride, oh, ow):
    kh, kw, cin = k.shape
    out = np.zeros((oh, ow, cin), dtype=np.float32)
    for oy in range(oh):
        for ox in range(ow):
            for dy in range(kh):
                for dx in range(kw):
                    iy = oy * stride + dy
                    ix = ox * stride + dx
                    for ci in range(cin):
                        out[oy, ox, ci] += xp[iy, ix, ci] * k[dy, dx, ci]
    return out


@njit(cache=True)
def _conv2d_i8(xp, in_zp, k, stride, oh, ow):
    kh, kw, cin, cout = k.shape
    out = np.zeros((oh, ow, cout), dtype=np.int32)
    for oy in range(oh):
        for ox in range(ow):
            for dy in range(kh):
                for dx in range(kw):
                    iy = oy * stride + dy
                    ix = ox * stride + dx
                    for ci in range(cin):
                        v = np.int32(xp[iy, ix, ci]) - in_zp
                        if v != 0:
                            for co in range(cout):
                                out[oy, ox, co] += v * np.int32(k[dy, dx, ci, co])
    return out


@njit(cache=True)
def _depthwise_i8(xp, in_zp, k, stride, oh, ow):
    kh, kw, cin = k.shape
    out = np.zeros((oh, ow, cin), dtype=np.int32)
    for oy in range(oh):
        for ox in range(ow):
            for dy in range(kh):
                for dx in range(kw):
                    iy = oy * stride + dy
                    ix = ox * stride + dx
                    for ci in range(cin):
                        v = np.int32(xp[iy, ix, ci]) - in_zp
                        out[oy, ox, ci] += v * np.int32(k[dy, dx, ci])
    return out


def conv2d_f32(x, k, stride=1):
    kh, kw, cin, cout = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"kernel expects {cin} input channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    return _conv2d_f32(np.ascontiguousarray(xp), np.ascontiguousarray(k), stride, oh, ow)


def depthwise_conv_f32(x, k, stride=1):
    kh, kw, cin = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"depthwise kernel expects {cin} channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)))
    return _depthwise_f32(np.ascontiguousarray(xp), np.ascontiguousarray(k), stride, oh, ow)


def conv2d_i8(x, in_zp, k, stride=1):
    kh, kw, cin, cout = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"kernel expects {cin} input channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=in_zp)
    return _conv2d_i8(np.ascontiguousarray(xp), np.int32(in_zp),
                      np.ascontiguousarray(k), stride, oh, ow)


def depthwise_conv_i8(x, in_zp, k, stride=1):
    kh, kw, cin = k.shape
    h, w, c = x.shape
    if c != cin:
        raise ValueError(f"depthwise kernel expects {cin} channels, image has {c}")
    oh, pt, pb = same_padding(h, kh, stride)
    ow, pl, pr = same_padding(w, kw, stride)
    xp = np.pad(x, ((pt, pb), (pl, pr), (0, 0)), constant_values=in_zp)
    return _depthwise_i8(np.ascontiguousarray(xp), np.int32(in_zp),
                         np.ascontiguousarray(k), stride, oh, ow)

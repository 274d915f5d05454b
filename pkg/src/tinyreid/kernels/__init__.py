"""Convolution kernel backend selection.

The numba backend is the default; set ``TINYREID_NUMBA=0`` to force the
pure-numpy fallback (also used automatically when numba is missing).
Both backends share the exact same integer semantics, so int8 results are
bit-identical either way.
"""

from __future__ import annotations

import os

import numpy as np

from . import numpy_impl

_want_numba = os.environ.get("TINYREID_NUMBA", "1") != "0"
if _want_numba:
    try:
        from . import numba_impl as _impl
    except ImportError:
        _impl = numpy_impl
else:
    _impl = numpy_impl

same_padding = numpy_impl.same_padding


def backend_name() -> str:
    return _impl.BACKEND


def conv2d_f32(x, kernel, bias=None, stride=1, acc64=False):
    """Standard 'same'-padded cross-correlation, HWC in, HWC out.

    ``acc64`` switches to float64 accumulation (numpy path) for oracle
    comparisons; the result is cast back to float32.
    """
    if acc64:
        out = _conv2d_f64(x, kernel, stride)
    else:
        out = _impl.conv2d_f32(x, kernel, stride)
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype)
    return out


def depthwise_conv_f32(x, kernel, bias=None, stride=1, acc64=False):
    """Per-channel 'same'-padded 3x3 (or KhKw) spatial convolution."""
    if acc64:
        out = _depthwise_f64(x, kernel, stride)
    else:
        out = _impl.depthwise_conv_f32(x, kernel, stride)
    if bias is not None:
        out = out + np.asarray(bias, dtype=out.dtype)
    return out


def conv2d_i8_acc(x, in_zp, kernel, stride=1):
    """int8 conv accumulators: sum((x - in_zp) * w) over the receptive field, int32."""
    return _impl.conv2d_i8(x, in_zp, kernel, stride)


def depthwise_conv_i8_acc(x, in_zp, kernel, stride=1):
    return _impl.depthwise_conv_i8(x, in_zp, kernel, stride)


def _conv2d_f64(x, k, stride):
    out = numpy_impl.conv2d_f32(x.astype(np.float64), k.astype(np.float64), stride)
    return out.astype(np.float32)


def _depthwise_f64(x, k, stride):
    out = numpy_impl.depthwise_conv_f32(x.astype(np.float64), k.astype(np.float64), stride)
    return out.astype(np.float32)


def warmup():
    """Touch every jitted kernel once so later calls are compile-free."""
    x = np.zeros((4, 4, 2), dtype=np.float32)
    conv2d_f32(x, np.zeros((3, 3, 2, 3), dtype=np.float32), stride=1)
    conv2d_f32(x, np.zeros((3, 3, 2, 3), dtype=np.float32), stride=2)
    depthwise_conv_f32(x, np.zeros((3, 3, 2), dtype=np.float32), stride=1)
    depthwise_conv_f32(x, np.zeros((3, 3, 2), dtype=np.float32), stride=2)
    xi = np.zeros((4, 4, 2), dtype=np.int8)
    conv2d_i8_acc(xi, 0, np.zeros((3, 3, 2, 3), dtype=np.int8), stride=1)
    conv2d_i8_acc(xi, 0, np.zeros((3, 3, 2, 3), dtype=np.int8), stride=2)
    depthwise_conv_i8_acc(xi, 0, np.zeros((3, 3, 2), dtype=np.int8), stride=1)
    depthwise_conv_i8_acc(xi, 0, np.zeros((3, 3, 2), dtype=np.int8), stride=2)

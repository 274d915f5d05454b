"""Numeric substrate: affine int8 quantization, fixed-point requantization,
and vector normalization.

All activations are HWC row-major float32 or int8 arrays without a batch
dimension; standard conv weights are KhKwCinCout, depthwise weights KhKwC,
fully-connected weights CinCout.  Rounding is to nearest with ties away
from zero everywhere, so the integer path is bit-reproducible across hosts.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

F32 = np.float32
I8 = np.int8
I32 = np.int32

QMIN = -128
QMAX = 127

# Largest multiplier accepted by compute_fixed_point; rescale factors in a
# sane quantized graph are O(1), anything near 2**20 means broken scales.
_MAX_MULTIPLIER = float(2**20)


def round_half_away(x):
    """Round to nearest integer, ties away from zero (np.round ties to even)."""
    return np.trunc(x + np.copysign(0.5, x))


@dataclass(frozen=True)
class QuantParams:
    """Affine quantization parameters.

    ``scale`` is a positive float for per-tensor params or a 1-D array of
    positive floats for per-channel params.  Per-channel params are
    symmetric: zero_point must be 0.
    """

    scale: float | np.ndarray
    zero_point: int = 0

    def __post_init__(self):
        if self.per_channel:
            if not np.all(np.asarray(self.scale) > 0):
                raise ValueError("every per-channel scale must be > 0")
            if self.zero_point != 0:
                raise ValueError("per-channel quantization is symmetric (zero_point 0)")
        else:
            if not (self.scale > 0 and math.isfinite(self.scale)):
                raise ValueError(f"scale must be a positive finite real, got {self.scale}")
            if not QMIN <= self.zero_point <= QMAX:
                raise ValueError(f"zero_point {self.zero_point} outside [{QMIN}, {QMAX}]")

    @property
    def per_channel(self) -> bool:
        return isinstance(self.scale, np.ndarray)


def quantize_affine(x, q: QuantParams):
    """Map real values to int8: clip(round(x / scale) + zero_point, -128, 127)."""
    if q.per_channel:
        raise ValueError("quantize_affine expects per-tensor params")
    v = round_half_away(np.asarray(x, dtype=np.float64) / q.scale) + q.zero_point
    out = np.clip(v, QMIN, QMAX).astype(I8)
    return out if out.ndim else I8(out)


def dequantize_affine(v, q: QuantParams):
    """Map int8 values back to reals: (q - zero_point) * scale."""
    if q.per_channel:
        raise ValueError("dequantize_affine expects per-tensor params")
    out = (np.asarray(v, dtype=np.float64) - q.zero_point) * q.scale
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class FixedPointMultiplier:
    """A positive real factor as mantissa * 2**(shift - 31), mantissa in [2**30, 2**31)."""

    mantissa: int
    shift: int

    def value(self) -> float:
        return self.mantissa * 2.0 ** (self.shift - 31)


def compute_fixed_point(m: float) -> FixedPointMultiplier:
    """Decompose a positive real multiplier into normalized mantissa and shift.

    The reconstruction mantissa * 2**(shift-31) matches ``m`` to better than
    one part in 2**30.
    """
    if not (isinstance(m, (int, float)) and math.isfinite(m)) or m <= 0:
        raise ValueError(f"multiplier must be a positive finite real, got {m!r}")
    if m >= _MAX_MULTIPLIER:
        raise ValueError(f"multiplier {m} out of range (>= {_MAX_MULTIPLIER})")
    frac, exp = math.frexp(m)  # m = frac * 2**exp, frac in [0.5, 1)
    mant = int(round_half_away(frac * 2.0**31))
    if mant == 2**31:
        mant >>= 1
        exp += 1
    return FixedPointMultiplier(mantissa=mant, shift=exp)


def compute_fixed_point_vec(m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vector form of compute_fixed_point: (mantissa int64 array, shift int32 array)."""
    m = np.asarray(m, dtype=np.float64)
    if not np.all(np.isfinite(m)) or np.any(m <= 0) or np.any(m >= _MAX_MULTIPLIER):
        raise ValueError("multipliers must be positive finite reals below 2**20")
    frac, exp = np.frexp(m)
    mant = round_half_away(frac * 2.0**31).astype(np.int64)
    carry = mant == 2**31
    mant[carry] >>= 1
    exp = exp.astype(np.int32)
    exp[carry] += 1
    return mant, exp


def rescale_int(acc, mantissa, shift):
    """Multiply int32 accumulators by mantissa * 2**(shift-31) in pure integer math.

    Rounds to nearest, ties away from zero.  ``mantissa``/``shift`` may be
    scalars or arrays broadcastable against ``acc`` (per-channel rescale on
    the last axis).  Returns int64.
    """
    prod = np.asarray(acc, dtype=np.int64) * np.asarray(mantissa, dtype=np.int64)
    s = 31 - np.asarray(shift, dtype=np.int64)
    prod, s = np.broadcast_arrays(prod, s)
    out = np.empty_like(prod)

    big = s > 63  # |prod| < 2**62, so prod / 2**s rounds to 0
    right = (s >= 1) & ~big
    if np.any(right):
        sr = np.where(right, s, 1)
        half = np.int64(1) << (sr - 1)
        mag = (np.abs(prod) + half) >> sr
        np.copyto(out, np.where(prod < 0, -mag, mag), where=right)
    left = s < 0
    if np.any(left):
        # Anything this large saturates int8 after clipping; clamp to keep
        # the int64 left shift from overflowing.
        clamped = np.clip(prod, -(2**40), 2**40)
        np.copyto(out, clamped << np.where(left, -s, 0), where=left)
    np.copyto(out, prod, where=s == 0)
    np.copyto(out, 0, where=big)
    return out if out.ndim else np.int64(out)


def requantize(acc, fpm: FixedPointMultiplier, out_zp: int):
    """Map an int32 accumulator to int8: clip(round(acc * m) + out_zp, -128, 127).

    Integer arithmetic only (64-bit intermediate product); saturates.
    """
    v = rescale_int(acc, fpm.mantissa, fpm.shift) + out_zp
    out = np.clip(v, QMIN, QMAX).astype(I8)
    return out if out.ndim else I8(out)


def requantize_per_channel(acc, mantissa, shift, out_zp, lo=QMIN, hi=QMAX):
    """Requantize an int32 HWC accumulator with per-channel multipliers.

    ``lo``/``hi`` narrow the clip range so a fused ReLU6 costs nothing.
    """
    v = rescale_int(acc, mantissa, shift) + out_zp
    return np.clip(v, lo, hi).astype(I8)


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale a vector to unit L2 norm; near-zero vectors map to the zero vector."""
    v = np.asarray(v)
    out_dtype = v.dtype if v.dtype.kind == "f" else np.float64
    x = v.astype(np.float64)
    n = float(np.linalg.norm(x))
    if n < 1e-12:
        return np.zeros(v.shape, dtype=out_dtype)
    return (x / n).astype(out_dtype)

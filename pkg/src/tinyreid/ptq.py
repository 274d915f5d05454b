"""Post-training quantization: min/max activation calibration on a
representative image set, then conversion of a float model into a fully
integer one (per-channel symmetric weights, per-tensor activations).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import arch, fp32
from .int8 import ModelWeightsI8
from .tensor import QMAX, QMIN, QuantParams, round_half_away

DEFAULT_CALIB_COUNT = 100


@dataclass
class CalibrationStats:
    """Running min/max per activation edge."""

    edges: dict[str, tuple[float, float]] = field(default_factory=dict)
    sample_count: int = 0

    def update(self, recorded: dict[str, np.ndarray]):
        for name, arr in recorded.items():
            lo, hi = float(arr.min()), float(arr.max())
            if name in self.edges:
                plo, phi = self.edges[name]
                self.edges[name] = (min(plo, lo), max(phi, hi))
            else:
                self.edges[name] = (lo, hi)
        self.sample_count += 1

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        out = CalibrationStats(edges=dict(self.edges),
                               sample_count=self.sample_count + other.sample_count)
        for name, (lo, hi) in other.edges.items():
            if name in out.edges:
                plo, phi = out.edges[name]
                out.edges[name] = (min(plo, lo), max(phi, hi))
            else:
                out.edges[name] = (lo, hi)
        return out


def calibrate(weights: fp32.ModelWeightsF32, images, threads: int | None = None) -> CalibrationStats:
    """Record activation ranges over a representative image set.

    Min/max merging is associative and order-independent, so images may be
    processed in parallel.
    """
    images = list(images)
    if not images:
        raise ValueError("calibration needs at least one image")

    def one(img):
        rec: dict[str, np.ndarray] = {}
        fp32.run_f32(weights, img, record=rec)
        return rec

    stats = CalibrationStats()
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for rec in pool.map(one, images):
                stats.update(rec)
    else:
        for img in images:
            stats.update(one(img))
    return stats


def activation_qparams(lo: float, hi: float) -> QuantParams:
    """Per-tensor params covering [lo, hi], widened so 0.0 is representable.

    Scales are rounded to float32 up front: that is their serialized width,
    and rounding here keeps a freshly quantized model and a reloaded one
    computing identical requantization multipliers.
    """
    if lo > hi:
        raise ValueError(f"min {lo} > max {hi}")
    lo, hi = min(lo, 0.0), max(hi, 0.0)
    if hi == lo:
        scale = 1.0 / 256.0
    else:
        scale = (hi - lo) / 255.0
    scale = float(np.float32(scale))
    zp = int(np.clip(round_half_away(-128.0 - lo / scale), QMIN, QMAX))
    return QuantParams(scale=scale, zero_point=zp)


def weight_qparams(kernel: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Symmetric per-channel weight quantization along ``axis``.

    Returns (int8 kernel, per-channel scales).  All-zero channels get the
    inert fallback scale 1/127.
    """
    k = np.moveaxis(kernel.astype(np.float64), axis, -1)
    absmax = np.abs(k).max(axis=tuple(range(k.ndim - 1)))
    scales = np.where(absmax > 0, absmax / 127.0, 1.0 / 127.0)
    q = np.clip(round_half_away(k / scales), QMIN, QMAX).astype(np.int8)
    return np.moveaxis(q, -1, axis), scales


def quantize_model(weights: fp32.ModelWeightsF32, stats: CalibrationStats) -> ModelWeightsI8:
    """Convert calibrated float weights into an integer-only model.

    The folded per-channel scale is multiplied into the kernel before
    quantization; biases are stored as int32 at scale_in * scale_w.
    """
    spec = weights.spec
    weights.validate()
    needed = arch.activation_edges(spec)
    missing = [e for e in needed if e not in stats.edges]
    if missing:
        raise ValueError(f"calibration stats missing edges: {missing}")

    act_qparams = {e: activation_qparams(*stats.edges[e]) for e in needed}
    tensors: dict[str, dict[str, np.ndarray]] = {}
    for u in arch.exec_units(spec):
        if u.op not in ("conv", "dw", "fc"):
            continue
        t = weights.tensors
        s_in = act_qparams[u.in_edge].scale
        if u.op == "fc":
            eff = t["fc.w"].astype(np.float64)
            qk, w_scale = weight_qparams(eff, axis=1)
            bias = t["fc.b"].astype(np.float64)
        else:
            kern = t[f"{u.weight}.kernel"].astype(np.float64)
            eff = kern * t[f"{u.weight}.scale"].astype(np.float64)
            qk, w_scale = weight_qparams(eff, axis=eff.ndim - 1)
            bias = t[f"{u.weight}.bias"].astype(np.float64)
        qb = round_half_away(bias / (s_in * w_scale))
        qb = np.clip(qb, np.iinfo(np.int32).min, np.iinfo(np.int32).max).astype(np.int32)
        tensors[u.weight] = {
            "kernel": qk,
            "w_scale": w_scale.astype(np.float32),
            "bias": qb,
        }
    return ModelWeightsI8(spec=spec, tensors=tensors, act_qparams=act_qparams)

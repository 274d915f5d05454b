"""Bit-exact integer-only forward pass: the host-side twin of the deployed
model.  Between input quantization and embedding dequantization every
buffer is int8/int32 and every rounding step is defined in integer
arithmetic, so embeddings are bitwise reproducible on any host.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import arch, kernels
from .tensor import (QMAX, QMIN, QuantParams, compute_fixed_point,
                     compute_fixed_point_vec, l2_normalize, quantize_affine,
                     requantize_per_channel, rescale_int)


@dataclass
class ModelWeightsI8:
    """Quantized model: int8 kernels with per-channel symmetric scales,
    int32 biases at scale_in * scale_w, and per-tensor activation params
    for every edge.  Requantization multipliers are precomputed."""

    spec: arch.ModelSpec
    tensors: dict[str, dict[str, np.ndarray]]
    act_qparams: dict[str, QuantParams]
    _requant: dict[str, tuple[np.ndarray, np.ndarray]] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.validate()
        self._prepare()

    def validate(self):
        for e in arch.activation_edges(self.spec):
            if e not in self.act_qparams:
                raise ValueError(f"missing activation params for edge {e}")
            if self.act_qparams[e].per_channel:
                raise ValueError(f"activation edge {e} must be per-tensor")
        shapes = arch.weight_shapes(self.spec)
        for u in arch.exec_units(self.spec):
            if u.op not in ("conv", "dw", "fc"):
                continue
            entry = self.tensors.get(u.weight)
            if entry is None:
                raise ValueError(f"missing quantized tensors for {u.weight}")
            kshape = shapes["fc.w"] if u.op == "fc" else shapes[f"{u.weight}.kernel"]
            if tuple(entry["kernel"].shape) != kshape:
                raise ValueError(f"{u.weight}: kernel shape {entry['kernel'].shape} != {kshape}")
            if entry["kernel"].dtype != np.int8:
                raise ValueError(f"{u.weight}: kernel must be int8")
            nch = u.cin if u.op == "dw" else u.cout
            for part, dt in (("w_scale", np.float32), ("bias", np.int32)):
                if entry[part].shape != (nch,) or entry[part].dtype != dt:
                    raise ValueError(f"{u.weight}.{part}: expected ({nch},) {dt}")
            if not np.all(entry["w_scale"] > 0):
                raise ValueError(f"{u.weight}: weight scales must be > 0")

    def _prepare(self):
        """Precompute fixed-point multipliers for every rescale site."""
        for u in arch.exec_units(self.spec):
            s_out = self.act_qparams[u.out_edge].scale
            if u.op in ("conv", "dw", "fc"):
                s_in = self.act_qparams[u.in_edge].scale
                w = self.tensors[u.weight]["w_scale"].astype(np.float64)
                self._requant[u.out_edge] = compute_fixed_point_vec(s_in * w / s_out)
            elif u.op == "add":
                for side in (u.lhs_edge, u.rhs_edge):
                    m = compute_fixed_point(self.act_qparams[side].scale / s_out)
                    self._requant[f"{u.out_edge}<-{side}"] = (
                        np.int64(m.mantissa), np.int32(m.shift))
            elif u.op == "gap":
                shape = arch.edge_shapes(self.spec)[u.in_edge]
                count = shape[0] * shape[1]
                s_in = self.act_qparams[u.in_edge].scale
                m = compute_fixed_point(s_in / (s_out * count))
                self._requant[u.out_edge] = (np.int64(m.mantissa), np.int32(m.shift))


def _act_bounds(qp: QuantParams, relu6: bool) -> tuple[int, int]:
    if not relu6:
        return QMIN, QMAX
    lo = max(QMIN, qp.zero_point)  # real 0.0 sits exactly on the zero point
    hi = int(quantize_affine(6.0, qp))
    return lo, hi


def run_i8(weights: ModelWeightsI8, image_q: np.ndarray,
           record: dict | None = None) -> dict[str, np.ndarray]:
    """Execute the integer graph; returns the edge map of int8 buffers."""
    spec = weights.spec
    if tuple(image_q.shape) != spec.input_shape:
        raise ValueError(f"expected image shape {spec.input_shape}, got {tuple(image_q.shape)}")
    if image_q.dtype != np.int8:
        raise ValueError(f"expected int8 image, got {image_q.dtype}")

    edges: dict[str, np.ndarray] = {"input": np.ascontiguousarray(image_q)}
    if record is not None:
        record["input"] = edges["input"]
    for u in arch.exec_units(spec):
        out_qp = weights.act_qparams[u.out_edge]
        if u.op in ("conv", "dw"):
            in_zp = weights.act_qparams[u.in_edge].zero_point
            entry = weights.tensors[u.weight]
            if u.op == "conv":
                acc = kernels.conv2d_i8_acc(edges[u.in_edge], in_zp, entry["kernel"], u.stride)
            else:
                acc = kernels.depthwise_conv_i8_acc(edges[u.in_edge], in_zp,
                                                    entry["kernel"], u.stride)
            acc = acc + entry["bias"]
            mant, shift = weights._requant[u.out_edge]
            lo, hi = _act_bounds(out_qp, u.relu6)
            y = requantize_per_channel(acc, mant, shift, out_qp.zero_point, lo, hi)
        elif u.op == "add":
            parts = []
            for side in (u.lhs_edge, u.rhs_edge):
                mant, shift = weights._requant[f"{u.out_edge}<-{side}"]
                zp = weights.act_qparams[side].zero_point
                parts.append(rescale_int(edges[side].astype(np.int32) - zp, mant, shift))
            y = np.clip(parts[0] + parts[1] + out_qp.zero_point, QMIN, QMAX).astype(np.int8)
        elif u.op == "gap":
            in_zp = weights.act_qparams[u.in_edge].zero_point
            x = edges[u.in_edge].astype(np.int32) - in_zp
            acc = x.sum(axis=(0, 1), dtype=np.int32).reshape(1, 1, -1)
            mant, shift = weights._requant[u.out_edge]
            y = requantize_per_channel(acc, mant, shift, out_qp.zero_point)
        elif u.op == "fc":
            in_zp = weights.act_qparams[u.in_edge].zero_point
            entry = weights.tensors[u.weight]
            v = edges[u.in_edge].reshape(-1).astype(np.int32) - in_zp
            acc = v @ entry["kernel"].astype(np.int32) + entry["bias"]
            mant, shift = weights._requant[u.out_edge]
            y = requantize_per_channel(acc, mant, shift, out_qp.zero_point).reshape(1, 1, -1)
        else:  # pragma: no cover
            raise AssertionError(u.op)
        edges[u.out_edge] = y
        if record is not None:
            record[u.out_edge] = y
    return edges


def forward_i8(weights: ModelWeightsI8, image_q: np.ndarray,
               record: dict | None = None) -> tuple[np.ndarray, QuantParams]:
    """Integer forward pass to the quantized embedding.

    L2 normalization is not an integer op; the caller dequantizes the
    returned vector with the returned params and normalizes host-side.
    """
    edges = run_i8(weights, image_q, record=record)
    return edges["embedding"].reshape(-1).copy(), weights.act_qparams["embedding"]


def dequantize_embedding(embedding_q: np.ndarray, qp: QuantParams) -> np.ndarray:
    """Element-wise (q - zero_point) * scale, then L2 normalization."""
    real = (embedding_q.astype(np.float64) - qp.zero_point) * qp.scale
    return l2_normalize(real.astype(np.float32))


def quantize_image(weights: ModelWeightsI8, image: np.ndarray) -> np.ndarray:
    """Quantize a preprocessed float image with the model's input params."""
    return quantize_affine(image, weights.act_qparams["input"])

"""Float32 forward pass: the reference the integer path is validated
against, and the backend for workstation-side evaluation.

Weights hold batch-norm pre-folded as a per-channel (scale, bias) affine
on every convolution: y = scale * conv(x, kernel) + bias.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import arch, kernels
from .tensor import l2_normalize


@dataclass
class ModelWeightsF32:
    spec: arch.ModelSpec
    tensors: dict[str, np.ndarray]

    def __post_init__(self):
        self.validate()

    def validate(self):
        expected = arch.weight_shapes(self.spec)
        missing = expected.keys() - self.tensors.keys()
        if missing:
            raise ValueError(f"missing weight tensors: {sorted(missing)}")
        for name, shape in expected.items():
            t = self.tensors[name]
            if tuple(t.shape) != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {tuple(t.shape)}")
            if t.dtype != np.float32:
                raise ValueError(f"{name}: expected float32, got {t.dtype}")
            if not np.all(np.isfinite(t)):
                raise ValueError(f"{name}: non-finite values")


def relu6(x: np.ndarray) -> np.ndarray:
    return np.clip(x, np.float32(0), np.float32(6))


def _check_image(spec: arch.ModelSpec, image: np.ndarray) -> np.ndarray:
    if tuple(image.shape) != spec.input_shape:
        raise ValueError(f"expected image shape {spec.input_shape}, got {tuple(image.shape)}")
    return np.ascontiguousarray(image, dtype=np.float32)


def run_f32(weights: ModelWeightsF32, image: np.ndarray,
            record: dict | None = None) -> dict[str, np.ndarray]:
    """Run every execution unit; returns the live edge map (last entry is
    the pre-normalization embedding).  ``record`` captures all edges."""
    x = _check_image(weights.spec, image)
    t = weights.tensors
    edges: dict[str, np.ndarray] = {"input": x}
    if record is not None:
        record["input"] = x
    for u in arch.exec_units(weights.spec):
        if u.op == "conv":
            y = kernels.conv2d_f32(edges[u.in_edge], t[f"{u.weight}.kernel"], stride=u.stride)
            y = y * t[f"{u.weight}.scale"] + t[f"{u.weight}.bias"]
            if u.relu6:
                y = relu6(y)
        elif u.op == "dw":
            y = kernels.depthwise_conv_f32(edges[u.in_edge], t[f"{u.weight}.kernel"],
                                           stride=u.stride)
            y = y * t[f"{u.weight}.scale"] + t[f"{u.weight}.bias"]
            if u.relu6:
                y = relu6(y)
        elif u.op == "add":
            y = edges[u.lhs_edge] + edges[u.rhs_edge]
        elif u.op == "gap":
            h, w, c = edges[u.in_edge].shape
            # float64 accumulation keeps the pool of a constant map exact
            y = edges[u.in_edge].astype(np.float64).mean(axis=(0, 1)).reshape(1, 1, c)
        elif u.op == "fc":
            v = edges[u.in_edge].reshape(-1)
            y = (v @ t["fc.w"] + t["fc.b"]).reshape(1, 1, -1)
        else:  # pragma: no cover
            raise AssertionError(u.op)
        edges[u.out_edge] = y.astype(np.float32)
        if record is not None:
            record[u.out_edge] = edges[u.out_edge]
    return edges


def backbone_features(weights: ModelWeightsF32, image: np.ndarray) -> np.ndarray:
    """Pooled 1280-d features: the forward pass truncated before the FC."""
    return run_f32(weights, image)["gap"].reshape(-1).copy()


def forward_f32(weights: ModelWeightsF32, image: np.ndarray,
                record: dict | None = None) -> np.ndarray:
    """Full forward pass to the L2-normalized embedding."""
    edges = run_f32(weights, image, record=record)
    return l2_normalize(edges["embedding"].reshape(-1))

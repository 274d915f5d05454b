"""Float forward pass: structural properties and a layer-by-layer oracle
composition on a tiny model."""

import numpy as np
import pytest

from tinyreid import arch, fp32, store
from tinyreid.tensor import l2_normalize
from oracles import naive_conv2d, naive_depthwise


def test_embedding_is_unit_norm(small_model):
    rng = np.random.default_rng(0)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    emb = fp32.forward_f32(small_model, img)
    assert emb.shape == (128,)
    assert abs(float(np.linalg.norm(emb)) - 1.0) <= 1e-6


def test_forward_deterministic(small_model):
    rng = np.random.default_rng(1)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    a = fp32.forward_f32(small_model, img)
    b = fp32.forward_f32(small_model, img)
    assert np.array_equal(a, b)


def test_zero_image_zero_fc_gives_zero_vector(small_model):
    tensors = {k: v.copy() for k, v in small_model.tensors.items()}
    tensors["fc.w"] = np.zeros_like(tensors["fc.w"])
    tensors["fc.b"] = np.zeros_like(tensors["fc.b"])
    m = fp32.ModelWeightsF32(spec=small_model.spec, tensors=tensors)
    emb = fp32.forward_f32(m, np.zeros((64, 64, 3), dtype=np.float32))
    assert np.array_equal(emb, np.zeros(128, dtype=np.float32))


def test_image_shape_rejected(small_model):
    with pytest.raises(ValueError):
        fp32.forward_f32(small_model, np.zeros((32, 32, 3), dtype=np.float32))


def test_non_finite_weights_rejected(small_model):
    tensors = {k: v.copy() for k, v in small_model.tensors.items()}
    tensors["head.kernel"][0, 0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        fp32.ModelWeightsF32(spec=small_model.spec, tensors=tensors)


def test_relu6_clamps_exactly():
    x = np.array([-3.0, 0.0, 3.0, 6.0, 9.0], dtype=np.float32)
    assert np.array_equal(fp32.relu6(x), [0.0, 0.0, 3.0, 6.0, 6.0])


def test_gap_averages_head_output(small_model):
    rng = np.random.default_rng(2)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    rec = {}
    fp32.run_f32(small_model, img, record=rec)
    ref = rec["head"].astype(np.float64).mean(axis=(0, 1))
    assert np.abs(rec["gap"].reshape(-1) - ref).max() <= 1e-5


def test_gap_of_constant_map_is_exact(small_model):
    # all-zero kernels make the head a constant map relu6(head_bias)
    tensors = {k: (np.zeros_like(v) if k.endswith(".kernel") else v.copy())
               for k, v in small_model.tensors.items()}
    m = fp32.ModelWeightsF32(spec=small_model.spec, tensors=tensors)
    rec = {}
    fp32.run_f32(m, np.zeros((64, 64, 3), dtype=np.float32), record=rec)
    expected = np.clip(tensors["head.bias"], 0, 6)
    assert np.array_equal(rec["gap"].reshape(-1), expected)


def test_residual_blocks_with_zeroed_branch_are_identity(small_model):
    tensors = {k: v.copy() for k, v in small_model.tensors.items()}
    res_blocks = [l.name for l in small_model.spec.layers
                  if l.kind == arch.BOTTLENECK and l.has_residual]
    assert res_blocks
    for name in res_blocks:
        for part in ("expand", "project"):
            tensors[f"{name}.{part}.kernel"][:] = 0
            tensors[f"{name}.{part}.bias"][:] = 0
    m = fp32.ModelWeightsF32(spec=small_model.spec, tensors=tensors)
    rng = np.random.default_rng(3)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    rec = {}
    fp32.run_f32(m, img, record=rec)
    units = {u.out_edge: u for u in arch.exec_units(m.spec)}
    for name in res_blocks:
        add_unit = units[f"{name}.add"]
        assert np.array_equal(rec[f"{name}.add"], rec[add_unit.lhs_edge])


def test_backbone_features_match_gap_edge(small_model):
    rng = np.random.default_rng(4)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    rec = {}
    fp32.run_f32(small_model, img, record=rec)
    feats = fp32.backbone_features(small_model, img)
    assert feats.shape == (1280,)
    assert np.array_equal(feats, rec["gap"].reshape(-1))


def oracle_forward(weights, image, record):
    """Independent composition of naive kernels following the layer chain."""
    t = {k: v.astype(np.float64) for k, v in weights.tensors.items()}
    x = image.astype(np.float64)
    out = {"input": x}

    def relu6(v):
        return np.clip(v, 0.0, 6.0)

    for u in arch.exec_units(weights.spec):
        if u.op == "conv":
            y = naive_conv2d(out[u.in_edge], t[f"{u.weight}.kernel"], u.stride)
            y = y * t[f"{u.weight}.scale"] + t[f"{u.weight}.bias"]
            if u.relu6:
                y = relu6(y)
        elif u.op == "dw":
            y = naive_depthwise(out[u.in_edge], t[f"{u.weight}.kernel"], u.stride)
            y = y * t[f"{u.weight}.scale"] + t[f"{u.weight}.bias"]
            if u.relu6:
                y = relu6(y)
        elif u.op == "add":
            y = out[u.lhs_edge] + out[u.rhs_edge]
        elif u.op == "gap":
            y = out[u.in_edge].mean(axis=(0, 1)).reshape(1, 1, -1)
        elif u.op == "fc":
            y = (out[u.in_edge].reshape(-1) @ t["fc.w"] + t["fc.b"]).reshape(1, 1, -1)
        out[u.out_edge] = y
        record[u.out_edge] = y
    return l2_normalize(out["embedding"].reshape(-1))


def test_tiny_model_vs_oracle_composition():
    weights = store.generate_random_model(0.25, 2, 8, seed=42)
    rng = np.random.default_rng(5)
    img = rng.uniform(-1, 1, size=(64, 64, 3)).astype(np.float32)
    rec, oracle_rec = {}, {}
    emb = fp32.forward_f32(weights, img, record=rec)
    ref = oracle_forward(weights, img, oracle_rec)
    for edge, val in oracle_rec.items():
        assert np.abs(rec[edge].astype(np.float64) - val).max() <= 1e-5, edge
    assert np.abs(emb - ref).max() <= 1e-5

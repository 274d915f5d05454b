"""Backbone family construction: width-scaled, depth-truncated
inverted-residual networks for 64x64x3 inputs, plus parameter accounting
and activation-memory (tensor arena) planning.

A model is a straight chain: 3x3/2 stem, bottleneck 0 (expansion 1),
``n_blocks`` standard bottlenecks (expansion 6), a 1x1 head conv to 1280
channels, global average pooling, a fully-connected embedding layer, and
L2 normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

INPUT_H = 64
INPUT_W = 64
INPUT_C = 3

HEAD_CHANNELS = 1280
MAX_BLOCKS = 16

# Reference bottleneck configuration for blocks 1..16 (block 0 is fixed:
# expansion 1, 16 channels, stride 1).
BLOCK_CHANNELS = (24, 24, 32, 32, 32, 64, 64, 64, 64, 96, 96, 96, 160, 160, 160, 320)
BLOCK_STRIDES = (2, 1, 2, 1, 1, 2, 1, 1, 1, 1, 1, 1, 2, 1, 1, 1)

STEM = "Stem"
BOTTLENECK = "Bottleneck"
HEAD_CONV = "HeadConv"
GLOBAL_AVG_POOL = "GlobalAvgPool"
EMBEDDING_FC = "EmbeddingFC"
L2_NORM = "L2Norm"


def scale_channels(c: int, alpha: float) -> int:
    """Width-scale a channel count: floor(alpha * c), never below 8.

    The floor of 8 keeps depthwise kernels non-degenerate at small alpha.
    """
    if not 0 < alpha <= 1:
        raise ValueError(f"width multiplier must be in (0, 1], got {alpha}")
    if c < 1:
        raise ValueError(f"channel count must be >= 1, got {c}")
    return max(8, math.floor(alpha * c))


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    name: str
    in_shape: tuple[int, int, int]
    out_shape: tuple[int, int, int]
    expansion: int = 0  # bottlenecks only; 1 for block 0, 6 otherwise
    stride: int = 1
    has_residual: bool = False

    @property
    def expanded_channels(self) -> int:
        return self.in_shape[2] * self.expansion if self.kind == BOTTLENECK else 0


@dataclass(frozen=True)
class ModelSpec:
    alpha: float
    n_blocks: int
    embed_dim: int
    layers: tuple[LayerSpec, ...] = field(repr=False)

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return self.layers[0].in_shape

    def layer(self, name: str) -> LayerSpec:
        for l in self.layers:
            if l.name == name:
                return l
        raise KeyError(name)


def _down(size: int, stride: int) -> int:
    return -(-size // stride)


def build_spec(alpha: float, n_blocks: int, embed_dim: int = 128) -> ModelSpec:
    """Construct the layer chain for a (alpha, n_blocks, embed_dim) model."""
    if not 1 <= n_blocks <= MAX_BLOCKS:
        raise ValueError(f"n_blocks must be in [1, {MAX_BLOCKS}], got {n_blocks}")
    if embed_dim < 1:
        raise ValueError(f"embed_dim must be >= 1, got {embed_dim}")
    if not 0 < alpha <= 1:
        raise ValueError(f"width multiplier must be in (0, 1], got {alpha}")

    layers = []
    h, w, c = INPUT_H, INPUT_W, INPUT_C
    stem_c = scale_channels(32, alpha)
    oh, ow = _down(h, 2), _down(w, 2)
    layers.append(LayerSpec(STEM, "stem", (h, w, c), (oh, ow, stem_c), stride=2))
    h, w, c = oh, ow, stem_c

    block_cfg = [(1, scale_channels(16, alpha), 1)]
    block_cfg += [
        (6, scale_channels(BLOCK_CHANNELS[i], alpha), BLOCK_STRIDES[i])
        for i in range(n_blocks)
    ]
    for i, (t, out_c, stride) in enumerate(block_cfg):
        oh, ow = _down(h, stride), _down(w, stride)
        residual = stride == 1 and (h, w, c) == (oh, ow, out_c)
        layers.append(
            LayerSpec(BOTTLENECK, f"block{i}", (h, w, c), (oh, ow, out_c),
                      expansion=t, stride=stride, has_residual=residual)
        )
        h, w, c = oh, ow, out_c

    layers.append(LayerSpec(HEAD_CONV, "head", (h, w, c), (h, w, HEAD_CHANNELS)))
    layers.append(LayerSpec(GLOBAL_AVG_POOL, "gap", (h, w, HEAD_CHANNELS), (1, 1, HEAD_CHANNELS)))
    layers.append(LayerSpec(EMBEDDING_FC, "fc", (1, 1, HEAD_CHANNELS), (1, 1, embed_dim)))
    layers.append(LayerSpec(L2_NORM, "l2norm", (1, 1, embed_dim), (1, 1, embed_dim)))
    return ModelSpec(alpha=alpha, n_blocks=n_blocks, embed_dim=embed_dim, layers=tuple(layers))


def conv_param_count(kh: int, kw: int, cin: int, cout: int) -> int:
    """Kernel plus one bias per output channel."""
    return kh * kw * cin * cout + cout


def layer_param_count(layer: LayerSpec) -> int:
    """Parameters of one layer.

    Every convolution carries a folded per-channel scale and bias
    (batch-norm collapsed to an affine pair); the embedding FC carries a
    plain bias.
    """
    cin = layer.in_shape[2]
    cout = layer.out_shape[2]
    if layer.kind == STEM:
        return 3 * 3 * cin * cout + 2 * cout
    if layer.kind == BOTTLENECK:
        mid = layer.expanded_channels
        total = 0
        if layer.expansion > 1:
            total += cin * mid + 2 * mid          # 1x1 expand
        total += 3 * 3 * mid + 2 * mid            # 3x3 depthwise
        total += mid * cout + 2 * cout            # 1x1 linear projection
        return total
    if layer.kind == HEAD_CONV:
        return cin * cout + 2 * cout
    if layer.kind == EMBEDDING_FC:
        return cin * cout + cout
    return 0


def param_count(spec: ModelSpec) -> int:
    return sum(layer_param_count(l) for l in spec.layers)


def backbone_param_count(spec: ModelSpec) -> int:
    """Parameters excluding the head conv and embedding FC."""
    return sum(layer_param_count(l) for l in spec.layers
               if l.kind not in (HEAD_CONV, EMBEDDING_FC))


@dataclass(frozen=True)
class ArenaPlan:
    per_layer_bytes: tuple[tuple[int, int], ...]  # (layer index, live bytes)
    peak_bytes: int
    flash_bytes: int


def _elems(shape) -> int:
    h, w, c = shape
    return h * w * c


def layer_live_elements(layer: LayerSpec) -> int:
    """Peak live activation elements while a sequential executor runs ``layer``.

    The executor allocates one buffer per intermediate, frees a buffer as
    soon as its last reader finishes, and adds residuals in place into the
    projection output.  For bottlenecks the peak is the worst of the three
    stages (expand, depthwise, project); a residual skip keeps the block
    input alive through all of them.
    """
    n_in, n_out = _elems(layer.in_shape), _elems(layer.out_shape)
    if layer.kind != BOTTLENECK:
        return n_in + n_out
    ih, iw, _ = layer.in_shape
    oh, ow, _ = layer.out_shape
    mid = layer.expanded_channels
    n_exp = ih * iw * mid            # expand output, at input resolution
    n_dw = oh * ow * mid             # depthwise output, at output resolution
    skip = n_in if layer.has_residual else 0
    if layer.expansion > 1:
        stages = (
            n_in + n_exp,            # expand reads input
            skip + n_exp + n_dw,     # depthwise frees input unless residual
            skip + n_dw + n_out,     # project
        )
    else:
        stages = (n_in + n_dw, skip + n_dw + n_out)
    return max(stages)


def plan_arena(spec: ModelSpec, bytes_per_element: int) -> ArenaPlan:
    """Peak activation memory for a one-layer-at-a-time executor.

    ``bytes_per_element`` is 1 for the int8 model, 4 for float32.
    flash_bytes is the serialized model size in the matching on-disk format.
    """
    if bytes_per_element not in (1, 4):
        raise ValueError("bytes_per_element must be 1 (int8) or 4 (float32)")
    per_layer = tuple(
        (i, layer_live_elements(l) * bytes_per_element) for i, l in enumerate(spec.layers)
    )
    from . import store  # late import: store depends on arch for specs

    flash = (store.int8_file_size(spec) if bytes_per_element == 1
             else store.fp32_file_size(spec))
    return ArenaPlan(per_layer_bytes=per_layer,
                     peak_bytes=max(b for _, b in per_layer),
                     flash_bytes=flash)


# --- activation edge bookkeeping -------------------------------------------
#
# Every tensor flowing between kernels is an "edge".  Calibration records
# ranges per edge and the int8 executor carries one QuantParams per edge.

def activation_edges(spec: ModelSpec) -> list[str]:
    edges = ["input", "stem"]
    for l in spec.layers:
        if l.kind != BOTTLENECK:
            continue
        if l.expansion > 1:
            edges.append(f"{l.name}.expand")
        edges.append(f"{l.name}.dw")
        edges.append(f"{l.name}.project")
        if l.has_residual:
            edges.append(f"{l.name}.add")
    edges += ["head", "gap", "embedding"]
    return edges


def block_output_edge(layer: LayerSpec) -> str:
    return f"{layer.name}.add" if layer.has_residual else f"{layer.name}.project"


@dataclass(frozen=True)
class ExecUnit:
    """One step of the sequential executor.

    op is one of conv / dw / fc / gap / add.  conv, dw and fc carry a
    weight key ("stem", "block3.expand", "fc", ...); add merges a residual
    skip (lhs_edge) with the projection output (rhs_edge).
    """

    op: str
    out_edge: str
    in_edge: str = ""
    lhs_edge: str = ""
    rhs_edge: str = ""
    weight: str = ""
    stride: int = 1
    relu6: bool = False
    ksize: int = 1
    cin: int = 0
    cout: int = 0


def exec_units(spec: ModelSpec) -> tuple[ExecUnit, ...]:
    """Flatten the layer chain into kernel-level execution steps."""
    units = []
    prev = "input"
    for l in spec.layers:
        cin, cout = l.in_shape[2], l.out_shape[2]
        if l.kind == STEM:
            units.append(ExecUnit("conv", "stem", in_edge=prev, weight="stem",
                                  stride=2, relu6=True, ksize=3, cin=cin, cout=cout))
            prev = "stem"
        elif l.kind == BOTTLENECK:
            n = l.name
            mid = l.expanded_channels
            src = prev
            if l.expansion > 1:
                units.append(ExecUnit("conv", f"{n}.expand", in_edge=src,
                                      weight=f"{n}.expand", relu6=True,
                                      ksize=1, cin=cin, cout=mid))
                src = f"{n}.expand"
            units.append(ExecUnit("dw", f"{n}.dw", in_edge=src, weight=f"{n}.dw",
                                  stride=l.stride, relu6=True, ksize=3,
                                  cin=mid, cout=mid))
            units.append(ExecUnit("conv", f"{n}.project", in_edge=f"{n}.dw",
                                  weight=f"{n}.project", ksize=1,
                                  cin=mid, cout=cout))
            if l.has_residual:
                units.append(ExecUnit("add", f"{n}.add", lhs_edge=prev,
                                      rhs_edge=f"{n}.project", cout=cout))
                prev = f"{n}.add"
            else:
                prev = f"{n}.project"
        elif l.kind == HEAD_CONV:
            units.append(ExecUnit("conv", "head", in_edge=prev, weight="head",
                                  relu6=True, ksize=1, cin=cin, cout=cout))
            prev = "head"
        elif l.kind == GLOBAL_AVG_POOL:
            units.append(ExecUnit("gap", "gap", in_edge=prev, cin=cin, cout=cout))
            prev = "gap"
        elif l.kind == EMBEDDING_FC:
            units.append(ExecUnit("fc", "embedding", in_edge=prev, weight="fc",
                                  cin=cin, cout=cout))
            prev = "embedding"
    return tuple(units)


def weight_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Canonical tensor name -> shape map, in serialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    for u in exec_units(spec):
        if u.op == "conv":
            shapes[f"{u.weight}.kernel"] = (u.ksize, u.ksize, u.cin, u.cout)
            shapes[f"{u.weight}.scale"] = (u.cout,)
            shapes[f"{u.weight}.bias"] = (u.cout,)
        elif u.op == "dw":
            shapes[f"{u.weight}.kernel"] = (u.ksize, u.ksize, u.cin)
            shapes[f"{u.weight}.scale"] = (u.cin,)
            shapes[f"{u.weight}.bias"] = (u.cin,)
        elif u.op == "fc":
            shapes["fc.w"] = (u.cin, u.cout)
            shapes["fc.b"] = (u.cout,)
    return shapes


def edge_shapes(spec: ModelSpec) -> dict[str, tuple[int, int, int]]:
    shapes = {"input": spec.input_shape}
    for l in spec.layers:
        if l.kind == STEM:
            shapes["stem"] = l.out_shape
        elif l.kind == BOTTLENECK:
            ih, iw, _ = l.in_shape
            oh, ow, _ = l.out_shape
            mid = l.expanded_channels
            if l.expansion > 1:
                shapes[f"{l.name}.expand"] = (ih, iw, mid)
            shapes[f"{l.name}.dw"] = (oh, ow, mid)
            shapes[f"{l.name}.project"] = l.out_shape
            if l.has_residual:
                shapes[f"{l.name}.add"] = l.out_shape
        elif l.kind == HEAD_CONV:
            shapes["head"] = l.out_shape
        elif l.kind == GLOBAL_AVG_POOL:
            shapes["gap"] = l.out_shape
        elif l.kind == EMBEDDING_FC:
            shapes["embedding"] = l.out_shape
    return shapes

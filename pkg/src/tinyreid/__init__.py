"""tinyreid: desk-scale toolkit for microcontroller-class animal
re-identification — scaled embedding networks, integer-only int8
inference, memory planning, gallery retrieval, and few-shot adaptation."""

from .arch import (ArenaPlan, ModelSpec, build_spec, param_count, plan_arena,
                   scale_channels)
from .finetune import FinetuneConfig, finetune_head, head_gradient, triplet_loss
from .fp32 import ModelWeightsF32, forward_f32
from .int8 import ModelWeightsI8, dequantize_embedding, forward_i8
from .metrics import EvalReport, average_precision, cmc_topk, evaluate
from .ptq import CalibrationStats, activation_qparams, calibrate, quantize_model
from .reid import GalleryDB, embed, enroll, query
from .tensor import (FixedPointMultiplier, QuantParams, compute_fixed_point,
                     dequantize_affine, l2_normalize, quantize_affine, requantize)

__version__ = "0.1.0"

__all__ = [
    "ArenaPlan", "ModelSpec", "build_spec", "param_count", "plan_arena",
    "scale_channels",
    "FinetuneConfig", "finetune_head", "head_gradient", "triplet_loss",
    "ModelWeightsF32", "forward_f32",
    "ModelWeightsI8", "dequantize_embedding", "forward_i8",
    "EvalReport", "average_precision", "cmc_topk", "evaluate",
    "CalibrationStats", "activation_qparams", "calibrate", "quantize_model",
    "GalleryDB", "embed", "enroll", "query",
    "FixedPointMultiplier", "QuantParams", "compute_fixed_point",
    "dequantize_affine", "l2_normalize", "quantize_affine", "requantize",
    "__version__",
]

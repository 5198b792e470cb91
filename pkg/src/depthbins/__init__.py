"""Depth prediction as classification over log-spaced depth bins."""

from depthbins.quantize import (
    QuantizationSpec,
    make_spec,
    depth_to_label,
    label_to_depth,
    soft_weighted_depth,
    hard_max_depth,
    decode_score_volume,
)
from depthbins.metrics import (
    MetricReport,
    ConfusionMatrix,
    compute_metrics,
    confusion_matrix,
    submatrix_view,
)
from depthbins.model import ModelConfig, DepthNet, build_model, load_checkpoint, save_checkpoint
from depthbins.data import SceneSample, TargetGeometry, generate_indoor, generate_outdoor
from depthbins.densify import densify_depth
from depthbins.train import TrainSchedule, train, evaluate
from depthbins.tiling import TilePlan, plan_tiles, tiled_inference

__version__ = "0.1.0"

__all__ = [
    "QuantizationSpec", "make_spec", "depth_to_label", "label_to_depth",
    "soft_weighted_depth", "hard_max_depth", "decode_score_volume",
    "MetricReport", "ConfusionMatrix", "compute_metrics", "confusion_matrix",
    "submatrix_view",
    "ModelConfig", "DepthNet", "build_model", "load_checkpoint", "save_checkpoint",
    "SceneSample", "TargetGeometry", "generate_indoor", "generate_outdoor",
    "densify_depth",
    "TrainSchedule", "train", "evaluate",
    "TilePlan", "plan_tiles", "tiled_inference",
    "__version__",
]

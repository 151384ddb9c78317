"""Test-time adjustment of per-frame depth maps with smooth log-scale grids."""
from .camera import Intrinsics, Pose, backward_warp, forward_splat_depth, project, unproject
from .deformation import ScaleGridParams, apply_deformation, pullback_gradient, upsample_scale
from .errors import DegenerateSequenceError, InvalidInputError, LoadError
from .frame import FrameRecord
from .metrics import compute_metrics, median_scale_align
from .objective import FeatureConfig, LossConfig, pair_loss
from .schedule import OptimizeConfig, PairSchedule, StageConfig, build_pairs, optimize_sequence, propagate_scale

__version__ = "0.1.0"

__all__ = [
    "Intrinsics", "Pose", "backward_warp", "forward_splat_depth", "project", "unproject",
    "ScaleGridParams", "apply_deformation", "pullback_gradient", "upsample_scale",
    "DegenerateSequenceError", "InvalidInputError", "LoadError", "FrameRecord",
    "compute_metrics", "median_scale_align", "FeatureConfig", "LossConfig", "pair_loss",
    "OptimizeConfig", "PairSchedule", "StageConfig", "build_pairs", "optimize_sequence", "propagate_scale",
]

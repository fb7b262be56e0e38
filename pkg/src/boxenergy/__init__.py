"""Box-supervised mask energy: projection + pairwise affinity losses, direct optimizer."""

__version__ = "0.1.0"

from .color import color_similarity, downsample_lab, srgb_to_lab
from .core import (
    BoundingBox,
    EnergyConfig,
    InvalidBoxError,
    MaskField,
    NeighborhoodSpec,
    box_indicator,
    flat_index,
    sigmoid,
    unflat_index,
)
from .graph import EdgeSet, TauStats, build_edge_set, confident_positive_edges, edge_label_stats
from .losses import (
    LossReport,
    dice_loss,
    mask_energy,
    pairwise_loss_boxonly,
    pairwise_loss_supervised,
    pairwise_prob_diff,
    pairwise_prob_same,
    project,
    projection_loss,
)
from .metrics import InstanceScore, dice_coefficient, iou, method_comparison
from .optimize import (
    DivergenceError,
    OptimizationTrace,
    OptimizerConfig,
    binarize,
    init_field,
    minimize,
    tightest_bbox,
    upsample_mask,
)
from .oracle import (
    BruteForceResult,
    GradCheckReport,
    brute_force_minimize,
    check_gradient,
    finite_diff_grad,
)

__all__ = [
    "__version__",
    "BoundingBox",
    "BruteForceResult",
    "DivergenceError",
    "EdgeSet",
    "EnergyConfig",
    "GradCheckReport",
    "InstanceScore",
    "InvalidBoxError",
    "LossReport",
    "MaskField",
    "NeighborhoodSpec",
    "OptimizationTrace",
    "OptimizerConfig",
    "TauStats",
    "binarize",
    "box_indicator",
    "brute_force_minimize",
    "build_edge_set",
    "check_gradient",
    "color_similarity",
    "confident_positive_edges",
    "dice_coefficient",
    "dice_loss",
    "downsample_lab",
    "edge_label_stats",
    "finite_diff_grad",
    "flat_index",
    "init_field",
    "iou",
    "mask_energy",
    "method_comparison",
    "minimize",
    "pairwise_loss_boxonly",
    "pairwise_loss_supervised",
    "pairwise_prob_diff",
    "pairwise_prob_same",
    "project",
    "projection_loss",
    "sigmoid",
    "srgb_to_lab",
    "tightest_bbox",
    "unflat_index",
    "upsample_mask",
]

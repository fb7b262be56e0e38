"""Mask quality metrics and the per-method comparison used for evaluation."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import BoundingBox, EnergyConfig, box_indicator
from .optimize import OptimizerConfig, binarize, minimize

__all__ = ["InstanceScore", "iou", "dice_coefficient", "method_comparison"]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def dice_coefficient(a: np.ndarray, b: np.ndarray) -> float:
    """2|a&b| / (|a|+|b|); equals 2*iou/(1+iou) for any mask pair."""
    a = np.asarray(a) != 0
    b = np.asarray(b) != 0
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(np.count_nonzero(a)) + int(np.count_nonzero(b))
    if total == 0:
        return 1.0
    return 2.0 * int(np.count_nonzero(a & b)) / total


@dataclass(frozen=True)
class InstanceScore:
    """IoU/Dice of one mask against ground truth, tagged by producing method."""

    method: str  # "box_mask" | "proj_only" | "proj_pairwise"
    iou: float
    dice: float


def _score(method: str, mask: np.ndarray, gt: np.ndarray) -> InstanceScore:
    return InstanceScore(method=method, iou=iou(mask, gt), dice=dice_coefficient(mask, gt))


def method_comparison(
    image_lab: np.ndarray,
    box: BoundingBox,
    gt_mask: np.ndarray,
    config: EnergyConfig | None = None,
    opt: OptimizerConfig | None = None,
) -> list[InstanceScore]:
    """Score the box mask, the projection-only mask, and the full-energy mask.

    The projection-only variant reruns the optimizer with the pairwise
    weight zeroed; everything else is shared.
    """
    config = config or EnergyConfig()
    opt = opt or OptimizerConfig()
    h, w = image_lab.shape[:2]
    box = box.clip(h, w)
    bmask = box_indicator(box, h, w)

    scores = [_score("box_mask", bmask, gt_mask)]
    proj_field, _ = minimize(image_lab, box, replace(config, pairwise_weight=0.0), opt)
    scores.append(_score("proj_only", binarize(proj_field, opt.binarize_threshold), gt_mask))
    full_field, _ = minimize(image_lab, box, config, opt)
    scores.append(_score("proj_pairwise", binarize(full_field, opt.binarize_threshold), gt_mask))
    return scores

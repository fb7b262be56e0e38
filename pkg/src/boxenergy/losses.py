"""Projection, pairwise-affinity, and combined mask losses with analytic gradients.

All gradients are taken with respect to the mask logits, i.e. they include
the sigmoid derivative.  Pairwise gradients are accumulated with a single
ordered reduction so results are bit-reproducible.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import EnergyConfig, MaskField
from .graph import EdgeSet

__all__ = [
    "LOG_CLAMP",
    "LossReport",
    "project",
    "dice_loss",
    "projection_loss",
    "pairwise_prob_same",
    "pairwise_prob_diff",
    "pairwise_loss_supervised",
    "pairwise_loss_boxonly",
    "mask_energy",
]

# Log arguments are clamped here to keep saturated probabilities finite;
# past the clamp the derivative is taken as zero.
LOG_CLAMP = 1e-12


@dataclass(frozen=True)
class LossReport:
    """Scalar loss terms plus the combined gradient field.

    ``l_mask == l_proj + pairwise_weight * l_pairwise``; ``grad`` is
    d(l_mask)/d(logits), or None when gradients were not requested.
    """

    l_proj: float
    l_pairwise: float
    l_mask: float
    grad: np.ndarray | None


def project(mask_probs: np.ndarray, axis: str) -> np.ndarray:
    """Axis projection by maximum.

    axis="x" reduces each column to its max (length W); axis="y" reduces
    each row (length H).
    """
    if axis == "x":
        return np.max(mask_probs, axis=0)
    if axis == "y":
        return np.max(mask_probs, axis=1)
    raise ValueError("axis must be 'x' or 'y'")


def dice_loss(p: np.ndarray, q: np.ndarray, eps: float = 1e-5) -> float:
    """1 - (2*sum(p*q) + eps) / (sum(p^2) + sum(q^2) + eps)."""
    value, _ = _dice_value_grad(p, q, eps, with_grad=False)
    return value


def _dice_value_grad(
    p: np.ndarray, q: np.ndarray, eps: float, with_grad: bool = True
) -> tuple[float, np.ndarray | None]:
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"vector lengths differ: {p.shape} vs {q.shape}")
    num = 2.0 * float(p @ q) + eps
    den = float(p @ p) + float(q @ q) + eps
    value = 1.0 - num / den
    if not with_grad:
        return value, None
    # d/dp_k [1 - num/den] = (num * 2 p_k - den * 2 q_k) / den^2
    grad = (2.0 * num * p - 2.0 * den * q) / (den * den)
    return value, grad


def projection_loss(
    field: MaskField,
    box_mask: np.ndarray,
    eps: float = 1e-5,
    with_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Dice loss between the field's axis projections and the box's.

    The max projection routes each axis entry's derivative to exactly one
    pixel per row/column: the arg-max, with ties broken toward the smallest
    flat index (numpy argmax order).
    """
    probs = field.probs
    if box_mask.shape != probs.shape:
        raise ValueError(
            f"box mask shape {box_mask.shape} does not match field {probs.shape}"
        )
    box = np.asarray(box_mask, dtype=np.float64)
    h, w = probs.shape

    proj_x = np.max(probs, axis=0)
    proj_y = np.max(probs, axis=1)
    val_x, dx = _dice_value_grad(proj_x, np.max(box, axis=0), eps, with_grad)
    val_y, dy = _dice_value_grad(proj_y, np.max(box, axis=1), eps, with_grad)
    value = val_x + val_y
    if not with_grad:
        return value, None

    grad_probs = np.zeros_like(probs)
    rows_star = np.argmax(probs, axis=0)
    cols_star = np.argmax(probs, axis=1)
    grad_probs[rows_star, np.arange(w)] += dx
    grad_probs[np.arange(h), cols_star] += dy
    grad = grad_probs * probs * (1.0 - probs)
    return value, grad


def pairwise_prob_same(p_a, p_b):
    """Probability two pixels share a label: p_a*p_b + (1-p_a)*(1-p_b)."""
    return p_a * p_b + (1.0 - p_a) * (1.0 - p_b)


def pairwise_prob_diff(p_a, p_b):
    """Complement of :func:`pairwise_prob_same`; the two sum to 1 exactly."""
    return p_a * (1.0 - p_b) + (1.0 - p_a) * p_b


def _clamped_log_and_inv(p: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """log(max(p, clamp)) and its derivative wrt p (zero past the clamp)."""
    clamped = np.maximum(p, LOG_CLAMP)
    log = np.log(clamped)
    inv = np.where(p > LOG_CLAMP, 1.0 / clamped, 0.0)
    return log, inv


def _edge_probs(field: MaskField, es: EdgeSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    probs = field.probs
    flat = probs.ravel()
    return probs, flat[es.a], flat[es.b]


def _accumulate_edge_grad(
    probs: np.ndarray,
    es: EdgeSet,
    coef_a: np.ndarray,
    coef_b: np.ndarray,
) -> np.ndarray:
    """Scatter per-edge dL/dp coefficients onto pixels, then chain the sigmoid."""
    grad_flat = np.zeros(probs.size, dtype=np.float64)
    np.add.at(grad_flat, es.a, coef_a)
    np.add.at(grad_flat, es.b, coef_b)
    grad_probs = grad_flat.reshape(probs.shape)
    return grad_probs * probs * (1.0 - probs)


def pairwise_loss_supervised(
    field: MaskField,
    es: EdgeSet,
    gt: np.ndarray,
    with_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Mean BCE on edge-label agreement with labels taken from a mask.

    An edge is labeled positive when the mask agrees at both endpoints.
    The mean runs over the full in-box edge universe ``es.n_in``; an empty
    edge set yields (0, zero gradient).
    """
    if gt.shape != field.shape:
        raise ValueError(f"gt shape {gt.shape} does not match field {field.shape}")
    probs, pa, pb = _edge_probs(field, es)
    if len(es) == 0 or es.n_in == 0:
        return 0.0, (np.zeros_like(probs) if with_grad else None)

    gt_flat = np.asarray(gt).ravel() != 0
    y = gt_flat[es.a] == gt_flat[es.b]
    p_same = pairwise_prob_same(pa, pb)
    p_diff = 1.0 - p_same
    log_same, inv_same = _clamped_log_and_inv(p_same)
    log_diff, inv_diff = _clamped_log_and_inv(p_diff)
    n = float(es.n_in)
    value = -float(np.sum(np.where(y, log_same, log_diff))) / n
    if not with_grad:
        return value, None

    # dP_same/dp_a = 2 p_b - 1 and symmetrically for b; dP_diff = -dP_same.
    signed = np.where(y, inv_same, -inv_diff)
    coef_a = -(2.0 * pb - 1.0) * signed / n
    coef_b = -(2.0 * pa - 1.0) * signed / n
    return value, _accumulate_edge_grad(probs, es, coef_a, coef_b)


def pairwise_loss_boxonly(
    field: MaskField,
    es: EdgeSet,
    tau: float,
    norm: str = "confident",
    with_grad: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Positive-only BCE over edges whose color similarity clears tau.

    Only -log P(same) enters: below-threshold edges carry no usable label
    and are dropped.  ``norm="confident"`` divides by the retained edge
    count; ``norm="e_in"`` divides by the full in-box universe instead.
    """
    probs, pa, pb = _edge_probs(field, es)
    sel = es.similarity >= tau
    n_conf = int(np.count_nonzero(sel))
    denom = float(n_conf if norm == "confident" else es.n_in)
    if n_conf == 0 or denom == 0.0:
        return 0.0, (np.zeros_like(probs) if with_grad else None)
    if norm not in ("confident", "e_in"):
        raise ValueError("norm must be 'confident' or 'e_in'")

    pa_s, pb_s = pa[sel], pb[sel]
    p_same = pairwise_prob_same(pa_s, pb_s)
    log_same, inv_same = _clamped_log_and_inv(p_same)
    value = -float(np.sum(log_same)) / denom
    if not with_grad:
        return value, None

    coef_a = -(2.0 * pb_s - 1.0) * inv_same / denom
    coef_b = -(2.0 * pa_s - 1.0) * inv_same / denom
    sub = EdgeSet(
        a=es.a[sel],
        b=es.b[sel],
        similarity=es.similarity[sel],
        in_box_count=es.in_box_count[sel],
        n_in=es.n_in,
        height=es.height,
        width=es.width,
    )
    return value, _accumulate_edge_grad(probs, sub, coef_a, coef_b)


def mask_energy(
    field: MaskField,
    box_mask: np.ndarray,
    es: EdgeSet,
    config: EnergyConfig,
    mode: str = "box_only",
    gt: np.ndarray | None = None,
    with_grad: bool = True,
) -> LossReport:
    """Combined mask energy: projection term plus weighted pairwise term.

    mode="box_only" uses the similarity-thresholded positive-only pairwise
    loss; mode="supervised" labels edges from ``gt`` instead.
    """
    l_proj, g_proj = projection_loss(field, box_mask, config.epsilon_dice, with_grad)
    if mode == "box_only":
        l_pair, g_pair = pairwise_loss_boxonly(
            field, es, config.tau, config.pairwise_norm, with_grad
        )
    elif mode == "supervised":
        if gt is None:
            raise ValueError("supervised mode requires a gt mask")
        l_pair, g_pair = pairwise_loss_supervised(field, es, gt, with_grad)
    else:
        raise ValueError("mode must be 'box_only' or 'supervised'")

    l_mask = l_proj + config.pairwise_weight * l_pair
    grad = None
    if with_grad:
        assert g_proj is not None and g_pair is not None
        grad = g_proj + config.pairwise_weight * g_pair
    return LossReport(l_proj=l_proj, l_pairwise=l_pair, l_mask=l_mask, grad=grad)

"""Independent verification machinery.

Two oracles live here: central finite differences for checking analytic
gradients, and exhaustive enumeration of all binary masks on tiny grids for
checking minimizer structure.  Both deliberately avoid the gradient code
paths they are meant to verify.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EnergyConfig, MaskField
from .graph import EdgeSet
from .losses import mask_energy

__all__ = [
    "GradCheckReport",
    "BruteForceResult",
    "finite_diff_grad",
    "argmax_tie_mask",
    "check_gradient",
    "brute_force_minimize",
]


def finite_diff_grad(
    energy: Callable[[MaskField], float], field: MaskField, step: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient of a scalar energy, one logit at a time."""
    if step <= 0.0:
        raise ValueError("step must be positive")
    z = field.logits
    grad = np.zeros_like(z)
    h, w = z.shape
    for i in range(h):
        for j in range(w):
            plus = z.copy()
            plus[i, j] += step
            minus = z.copy()
            minus[i, j] -= step
            e_plus = energy(MaskField(plus))
            e_minus = energy(MaskField(minus))
            if not (np.isfinite(e_plus) and np.isfinite(e_minus)):
                raise ValueError(
                    f"energy non-finite when perturbing pixel ({i}, {j}): "
                    f"{e_plus!r} / {e_minus!r}"
                )
            grad[i, j] = (e_plus - e_minus) / (2.0 * step)
    return grad


def argmax_tie_mask(logits: np.ndarray, gap: float) -> np.ndarray:
    """Pixels in any row or column whose top-two logits are closer than ``gap``.

    A finite-difference step can flip which pixel realizes a row/column max
    near such ties, so gradient comparisons exclude them.
    """
    h, w = logits.shape
    mask = np.zeros((h, w), dtype=bool)
    if h >= 2:
        part = np.partition(logits, h - 2, axis=0)
        col_gap = part[h - 1, :] - part[h - 2, :]
        mask[:, col_gap < gap] = True
    if w >= 2:
        part = np.partition(logits, w - 2, axis=1)
        row_gap = part[:, w - 1] - part[:, w - 2]
        mask[row_gap < gap, :] = True
    return mask


@dataclass(frozen=True)
class GradCheckReport:
    """Outcome of one analytic-vs-numeric gradient comparison.

    The relative error is the largest absolute discrepancy over included
    pixels, normalized by the larger of the two gradient fields' max
    magnitudes (per-pixel ratios are meaningless where both gradients
    vanish).
    """

    max_rel_error: float
    worst_pixel: tuple[int, int]
    tolerance: float
    passed: bool


def check_gradient(
    value_and_grad: Callable[[MaskField], tuple[float, np.ndarray]],
    field: MaskField,
    step: float = 1e-4,
    tolerance: float = 1e-4,
    tie_gap: float | None = None,
) -> GradCheckReport:
    """Compare an analytic gradient against central finite differences.

    ``tie_gap`` (default 10x the step) sets the guard band around arg-max
    ties; rows/columns tighter than that are excluded from the comparison.
    """
    if tie_gap is None:
        tie_gap = 10.0 * step
    _, analytic = value_and_grad(field)
    numeric = finite_diff_grad(lambda f: value_and_grad(f)[0], field, step)
    include = ~argmax_tie_mask(field.logits, tie_gap)
    diff = np.where(include, np.abs(analytic - numeric), 0.0)
    scale = max(
        float(np.max(np.abs(np.where(include, analytic, 0.0)))),
        float(np.max(np.abs(np.where(include, numeric, 0.0)))),
        1e-12,
    )
    worst_flat = int(np.argmax(diff))
    worst = (worst_flat // field.shape[1], worst_flat % field.shape[1])
    max_rel = float(diff.max()) / scale
    return GradCheckReport(
        max_rel_error=max_rel,
        worst_pixel=worst,
        tolerance=tolerance,
        passed=max_rel <= tolerance,
    )


@dataclass(frozen=True)
class BruteForceResult:
    """Exhaustive minimization result over every binary mask of a tiny grid."""

    n_masks: int
    min_energy: float
    argmin_masks: list[np.ndarray]


def brute_force_minimize(
    box_mask: np.ndarray,
    es: EdgeSet,
    config: EnergyConfig,
    mode: str = "box_only",
    gt: np.ndarray | None = None,
    logit_magnitude: float = 12.0,
    tol: float = 1e-8,
) -> BruteForceResult:
    """Evaluate the mask energy at every binary field on a grid of <= 16 pixels.

    Binary masks are represented by near-saturated logits (+/- magnitude) so
    the exact same real-valued energy code is exercised; masks within
    ``tol`` of the global minimum count as argmins, absorbing the residual
    sigmoid slack.
    """
    h, w = box_mask.shape
    n = h * w
    if n > 16:
        raise ValueError(f"grid {h}x{w} has {n} pixels; enumeration is capped at 16")
    n_masks = 1 << n
    bit_positions = np.arange(n, dtype=np.uint32)
    energies = np.empty(n_masks, dtype=np.float64)
    for k in range(n_masks):
        bits = (k >> bit_positions) & 1
        logits = logit_magnitude * (2.0 * bits.astype(np.float64) - 1.0)
        report = mask_energy(
            MaskField(logits.reshape(h, w)),
            box_mask,
            es,
            config,
            mode=mode,
            gt=gt,
            with_grad=False,
        )
        energies[k] = report.l_mask
    min_energy = float(energies.min())
    argmin_ids = np.flatnonzero(energies <= min_energy + tol)
    argmins = [
        (((k >> bit_positions) & 1).astype(np.uint8).reshape(h, w)) for k in argmin_ids
    ]
    return BruteForceResult(n_masks=n_masks, min_energy=min_energy, argmin_masks=argmins)

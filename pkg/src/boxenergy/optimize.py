"""Direct Adam minimization of the mask energy over a per-pixel logit field."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, EnergyConfig, MaskField, box_indicator
from .graph import build_edge_set
from .losses import mask_energy

__all__ = [
    "OptimizerConfig",
    "OptimizationTrace",
    "DivergenceError",
    "init_field",
    "minimize",
    "binarize",
    "tightest_bbox",
    "upsample_mask",
]


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings for direct field optimization.

    ``init="box_prior"`` starts the logits at +1 inside the box and -3
    outside, which breaks the inverse-mask symmetry immediately; "zeros"
    starts every probability at 0.5.  Convergence is declared when the
    relative energy change over ``convergence_window`` steps drops below
    ``convergence_tol``.
    """

    steps: int = 500
    learning_rate: float = 0.1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    init: str = "box_prior"
    binarize_threshold: float = 0.5
    convergence_tol: float = 1e-6
    convergence_window: int = 10

    def __post_init__(self) -> None:
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0.0 < self.binarize_threshold < 1.0:
            raise ValueError("binarize_threshold must lie strictly between 0 and 1")
        if self.init not in ("zeros", "box_prior"):
            raise ValueError("init must be 'zeros' or 'box_prior'")
        if self.convergence_window < 1:
            raise ValueError("convergence_window must be >= 1")

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "learning_rate": self.learning_rate,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "init": self.init,
            "binarize_threshold": self.binarize_threshold,
            "convergence_tol": self.convergence_tol,
            "convergence_window": self.convergence_window,
        }


@dataclass
class OptimizationTrace:
    """Per-step loss values plus the outcome of a minimization run."""

    l_proj: list[float] = field(default_factory=list)
    l_pairwise: list[float] = field(default_factory=list)
    l_mask: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    final_field: MaskField | None = None


class DivergenceError(RuntimeError):
    """Raised when the energy turns non-finite; carries the trace so far."""

    def __init__(self, message: str, trace: OptimizationTrace):
        super().__init__(message)
        self.trace = trace


def init_field(box_mask: np.ndarray, scheme: str = "box_prior") -> MaskField:
    """Initial logit field: all zeros, or +1 inside the box and -3 outside."""
    if scheme == "zeros":
        return MaskField(np.zeros(box_mask.shape, dtype=np.float64))
    if scheme == "box_prior":
        return MaskField(np.where(np.asarray(box_mask) != 0, 1.0, -3.0))
    raise ValueError("scheme must be 'zeros' or 'box_prior'")


def binarize(field: MaskField, threshold: float = 0.5) -> np.ndarray:
    """Binary mask: 1 where the foreground probability is >= threshold."""
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    return (field.probs >= threshold).astype(np.uint8)


def minimize(
    image_lab: np.ndarray,
    box: BoundingBox,
    config: EnergyConfig | None = None,
    opt: OptimizerConfig | None = None,
) -> tuple[MaskField, OptimizationTrace]:
    """Segment one instance by minimizing the box-only mask energy.

    Runs Adam on the logit grid against the combined energy.  The loop is
    fully deterministic: no randomness, fixed reduction order.  Returns the
    final field (whose energy equals the last recorded trace entry) and the
    per-step trace.
    """
    config = config or EnergyConfig()
    opt = opt or OptimizerConfig()
    h, w = image_lab.shape[:2]
    box = box.clip(h, w)
    bmask = box_indicator(box, h, w)
    es = build_edge_set(image_lab, bmask, config.neighborhood, config.theta)

    z = init_field(bmask, opt.init).logits.copy()
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    trace = OptimizationTrace()
    b1, b2 = opt.adam_beta1, opt.adam_beta2

    for t in range(1, opt.steps + 1):
        report = mask_energy(MaskField(z), bmask, es, config, mode="box_only")
        trace.l_proj.append(report.l_proj)
        trace.l_pairwise.append(report.l_pairwise)
        trace.l_mask.append(report.l_mask)
        trace.iterations = t
        if not math.isfinite(report.l_mask):
            raise DivergenceError(
                f"non-finite energy {report.l_mask!r} at step {t}", trace
            )
        if t > opt.convergence_window:
            prev = trace.l_mask[t - 1 - opt.convergence_window]
            if abs(report.l_mask - prev) <= opt.convergence_tol * max(abs(prev), 1e-12):
                trace.converged = True
                break
        if t == opt.steps:
            break  # keep the returned field consistent with the last record
        g = report.grad
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        z = z - opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.adam_eps)

    final = MaskField(z)
    trace.final_field = final
    return final, trace


def tightest_bbox(mask: np.ndarray) -> BoundingBox | None:
    """Half-open bounding box of a binary mask's nonzero pixels, or None."""
    ys, xs = np.nonzero(np.asarray(mask))
    if ys.size == 0:
        return None
    return BoundingBox(int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)


def upsample_mask(mask: np.ndarray, stride: int, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor upsample of a stride-grid mask back to image size."""
    if stride == 1:
        return np.asarray(mask, dtype=np.uint8)
    big = np.repeat(np.repeat(mask, stride, axis=0), stride, axis=1)
    return np.asarray(big[:height, :width], dtype=np.uint8)

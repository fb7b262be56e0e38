"""Shared value types: pixel grids, boxes, neighborhoods, and energy configuration."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "InvalidBoxError",
    "BoundingBox",
    "NeighborhoodSpec",
    "MaskField",
    "EnergyConfig",
    "box_indicator",
    "flat_index",
    "unflat_index",
    "sigmoid",
]


class InvalidBoxError(ValueError):
    """Raised when a bounding box is empty or degenerate after clipping."""


def flat_index(i: int, j: int, width: int) -> int:
    """Row-major flat index of pixel (i, j)."""
    return i * width + j


def unflat_index(k: int, width: int) -> tuple[int, int]:
    """Inverse of :func:`flat_index`."""
    return divmod(k, width)


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned pixel box with half-open corners: [x0, x1) x [y0, y1)."""

    x0: int
    y0: int
    x1: int
    y1: int

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> BoundingBox:
        """Build from an [x, y, width, height] annotation box.

        Fractional coordinates are rounded outward (floor on mins, ceil on
        maxes) so the resulting box never excludes annotated pixels.
        """
        return cls(math.floor(x), math.floor(y), math.ceil(x + w), math.ceil(y + h))

    def clip(self, height: int, width: int) -> BoundingBox:
        """Clip to an image of the given size; empty result raises InvalidBoxError."""
        x0, y0 = max(self.x0, 0), max(self.y0, 0)
        x1, y1 = min(self.x1, width), min(self.y1, height)
        if x0 >= x1 or y0 >= y1:
            raise InvalidBoxError(
                f"box {(self.x0, self.y0, self.x1, self.y1)} is empty after "
                f"clipping to a {height}x{width} image"
            )
        return BoundingBox(x0, y0, x1, y1)

    @property
    def width(self) -> int:
        return self.x1 - self.x0

    @property
    def height(self) -> int:
        return self.y1 - self.y0

    @property
    def area(self) -> int:
        return self.width * self.height

    def scaled_down(self, stride: int) -> BoundingBox:
        """Map to a grid coarsened by ``stride``, rounding outward."""
        return BoundingBox(
            self.x0 // stride,
            self.y0 // stride,
            math.ceil(self.x1 / stride),
            math.ceil(self.y1 / stride),
        )


def box_indicator(box: BoundingBox, height: int, width: int) -> np.ndarray:
    """Binary (height, width) grid that is 1 exactly inside the half-open box."""
    box = box.clip(height, width)
    grid = np.zeros((height, width), dtype=np.uint8)
    grid[box.y0 : box.y1, box.x0 : box.x1] = 1
    return grid


@dataclass(frozen=True)
class NeighborhoodSpec:
    """K x K pixel neighborhood with optional dilation; the center is excluded."""

    size: int = 3
    dilation: int = 2

    def __post_init__(self) -> None:
        if self.size < 3 or self.size % 2 == 0:
            raise ValueError("neighborhood size must be an odd integer >= 3")
        if self.dilation < 1:
            raise ValueError("dilation must be an integer >= 1")

    @property
    def reach(self) -> int:
        """Largest per-axis pixel distance any offset spans."""
        return (self.size - 1) // 2 * self.dilation

    def offsets(self) -> list[tuple[int, int]]:
        """All size^2 - 1 (dy, dx) offsets; the set is symmetric under negation."""
        r = (self.size - 1) // 2
        return [
            (self.dilation * a, self.dilation * b)
            for a in range(-r, r + 1)
            for b in range(-r, r + 1)
            if (a, b) != (0, 0)
        ]

    def forward_offsets(self) -> list[tuple[int, int]]:
        """One representative per +/- offset pair.

        Scanning every pixel against these offsets enumerates each unordered
        neighbor pair exactly once, with the second endpoint always at the
        strictly larger row-major flat index.
        """
        return [(dy, dx) for dy, dx in self.offsets() if dy > 0 or (dy == 0 and dx > 0)]


@dataclass(frozen=True)
class MaskField:
    """Per-pixel logit grid; sigmoid of the logits gives foreground probabilities."""

    logits: np.ndarray  # (H, W) float64

    def __post_init__(self) -> None:
        arr = np.asarray(self.logits, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("logits must form a 2-D grid")
        object.__setattr__(self, "logits", arr)

    @property
    def shape(self) -> tuple[int, int]:
        return self.logits.shape  # type: ignore[return-value]

    @property
    def probs(self) -> np.ndarray:
        """Foreground probabilities, strictly inside (0, 1) for finite logits."""
        return sigmoid(self.logits)


@dataclass(frozen=True)
class EnergyConfig:
    """Hyper-parameters of the mask energy.

    Defaults: similarity threshold 0.1, similarity temperature 2.0, 3x3
    neighborhood with dilation 2, unit pairwise weight.  ``pairwise_norm``
    selects the denominator of the box-only pairwise loss: "confident"
    divides by the number of edges above the threshold (scale-invariant in
    tau), "e_in" divides by the full in-box edge count.
    """

    tau: float = 0.1
    theta: float = 2.0
    neighborhood: NeighborhoodSpec = field(default_factory=NeighborhoodSpec)
    pairwise_weight: float = 1.0
    epsilon_dice: float = 1e-5
    pairwise_norm: str = "confident"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.tau) and 0.0 <= self.tau <= 1.0):
            raise ValueError("tau must lie in [0, 1]")
        if not (math.isfinite(self.theta) and self.theta > 0.0):
            raise ValueError("theta must be a positive real")
        if not (math.isfinite(self.pairwise_weight) and self.pairwise_weight >= 0.0):
            raise ValueError("pairwise_weight must be nonnegative")
        if not (math.isfinite(self.epsilon_dice) and self.epsilon_dice > 0.0):
            raise ValueError("epsilon_dice must be a small positive real")
        if self.pairwise_norm not in ("confident", "e_in"):
            raise ValueError("pairwise_norm must be 'confident' or 'e_in'")

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "theta": self.theta,
            "neighborhood_size": self.neighborhood.size,
            "neighborhood_dilation": self.neighborhood.dilation,
            "pairwise_weight": self.pairwise_weight,
            "epsilon_dice": self.epsilon_dice,
            "pairwise_norm": self.pairwise_norm,
        }

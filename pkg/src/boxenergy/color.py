"""sRGB to CIELAB conversion and per-edge color similarity."""
from __future__ import annotations

import numpy as np

__all__ = ["srgb_to_lab", "color_similarity", "similarity_from_distance", "downsample_lab"]

# Linear-RGB -> XYZ for the sRGB primaries, D65 white, 2 degree observer.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)

# Reference white taken as the matrix applied to (1, 1, 1) rather than the
# rounded tabulated values, so neutral grays map to a* = b* = 0 exactly.
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


def _lab_f(t: np.ndarray) -> np.ndarray:
    """Cube-root segment of the XYZ -> Lab transform with its linear toe."""
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def srgb_to_lab(rgb: np.ndarray) -> np.ndarray:
    """Convert an (H, W, 3) sRGB byte image to CIELAB.

    The pipeline is the standard one: undo the sRGB gamma, apply the
    linear-RGB -> XYZ matrix for D65, then the XYZ -> L*a*b* transform.
    Output is float64 with L* in [0, 100].
    """
    rgb = np.asarray(rgb)
    c = rgb.astype(np.float64) / 255.0
    lin = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE)
    lab = np.empty_like(f)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def similarity_from_distance(dist: np.ndarray, theta: float) -> np.ndarray:
    """exp(-dist / theta), the similarity kernel shared by all edge builders."""
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    return np.exp(-np.asarray(dist, dtype=np.float64) / theta)


def color_similarity(
    lab: np.ndarray, p: tuple[int, int], q: tuple[int, int], theta: float
) -> float:
    """Similarity of two pixels: exp(-||c_p - c_q||_2 / theta), in (0, 1]."""
    cp = lab[p[0], p[1]]
    cq = lab[q[0], q[1]]
    dist = float(np.linalg.norm(cp - cq))
    return float(similarity_from_distance(dist, theta))


def downsample_lab(lab: np.ndarray, stride: int) -> np.ndarray:
    """Mean-pool each channel over stride x stride blocks.

    Edge blocks may be partial; each output pixel is the arithmetic mean of
    whatever source pixels its block actually covers.  Stride 1 returns a
    copy of the input.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    lab = np.asarray(lab, dtype=np.float64)
    if stride == 1:
        return lab.copy()
    h, w = lab.shape[:2]
    row_starts = np.arange(0, h, stride)
    col_starts = np.arange(0, w, stride)
    pooled = np.add.reduceat(np.add.reduceat(lab, row_starts, axis=0), col_starts, axis=1)
    row_sizes = np.minimum(row_starts + stride, h) - row_starts
    col_sizes = np.minimum(col_starts + stride, w) - col_starts
    counts = row_sizes[:, None] * col_sizes[None, :]
    return pooled / counts[:, :, None]

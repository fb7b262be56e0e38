"""Pairwise pixel graph: neighbor enumeration, similarity, confident edges, label stats."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .color import similarity_from_distance
from .core import NeighborhoodSpec

__all__ = [
    "EdgeSet",
    "TauStats",
    "build_edge_set",
    "confident_positive_edges",
    "edge_label_counts",
    "edge_label_stats",
]


@dataclass(frozen=True)
class EdgeSet:
    """Unordered pixel pairs with per-edge color similarity.

    ``a`` and ``b`` are row-major flat indices with a < b, so no unordered
    pair appears twice.  ``n_in`` is the size of the universe the set was
    built from (the box-restricted edge count); it is preserved by
    confidence filtering so loss normalization can refer back to it.
    """

    a: np.ndarray  # (E,) int64 flat pixel indices
    b: np.ndarray  # (E,) int64, b > a elementwise
    similarity: np.ndarray  # (E,) float64 in (0, 1]
    in_box_count: np.ndarray  # (E,) uint8, endpoints inside the box (0, 1 or 2)
    n_in: int
    height: int
    width: int

    def __len__(self) -> int:
        return int(self.a.shape[0])

    def n_confident(self, tau: float) -> int:
        """Number of edges with similarity >= tau; nonincreasing in tau."""
        return int(np.count_nonzero(self.similarity >= tau))


def build_edge_set(
    lab: np.ndarray,
    box_mask: np.ndarray | None,
    spec: NeighborhoodSpec,
    theta: float,
) -> EdgeSet:
    """Enumerate each in-bounds unordered neighbor pair exactly once.

    With a box mask, only edges with at least one endpoint inside the box
    are kept (the rest never enter any loss and would waste memory).  With
    ``box_mask=None`` every in-bounds edge is kept, which is the universe
    used by whole-image label statistics.
    """
    h, w = lab.shape[:2]
    if box_mask is not None and box_mask.shape != (h, w):
        raise ValueError(
            f"box mask shape {box_mask.shape} does not match image shape {(h, w)}"
        )
    box_flat = None if box_mask is None else (np.asarray(box_mask).ravel() != 0)
    base = np.arange(h * w, dtype=np.int64).reshape(h, w)

    parts_a: list[np.ndarray] = []
    parts_b: list[np.ndarray] = []
    parts_s: list[np.ndarray] = []
    parts_c: list[np.ndarray] = []
    for dy, dx in spec.forward_offsets():
        i0, i1 = max(0, -dy), min(h, h - dy)
        j0, j1 = max(0, -dx), min(w, w - dx)
        if i0 >= i1 or j0 >= j1:
            continue
        a = base[i0:i1, j0:j1].ravel()
        b = base[i0 + dy : i1 + dy, j0 + dx : j1 + dx].ravel()
        diff = lab[i0:i1, j0:j1, :] - lab[i0 + dy : i1 + dy, j0 + dx : j1 + dx, :]
        dist = np.sqrt(np.sum(diff * diff, axis=-1)).ravel()
        if box_flat is None:
            count = np.zeros(a.shape[0], dtype=np.uint8)
            keep = slice(None)
        else:
            count = box_flat[a].astype(np.uint8) + box_flat[b].astype(np.uint8)
            keep = count >= 1
        parts_a.append(a[keep])
        parts_b.append(b[keep])
        parts_s.append(similarity_from_distance(dist[keep], theta))
        parts_c.append(count[keep] if box_flat is not None else count)

    if parts_a:
        a_all = np.concatenate(parts_a)
        b_all = np.concatenate(parts_b)
        s_all = np.concatenate(parts_s)
        c_all = np.concatenate(parts_c)
    else:
        a_all = np.empty(0, dtype=np.int64)
        b_all = np.empty(0, dtype=np.int64)
        s_all = np.empty(0, dtype=np.float64)
        c_all = np.empty(0, dtype=np.uint8)
    return EdgeSet(
        a=a_all,
        b=b_all,
        similarity=s_all,
        in_box_count=c_all,
        n_in=int(a_all.shape[0]),
        height=h,
        width=w,
    )


def confident_positive_edges(es: EdgeSet, tau: float) -> EdgeSet:
    """Subset of edges with similarity >= tau; keeps the parent's n_in."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError("tau must lie in [0, 1]")
    sel = es.similarity >= tau
    return EdgeSet(
        a=es.a[sel],
        b=es.b[sel],
        similarity=es.similarity[sel],
        in_box_count=es.in_box_count[sel],
        n_in=es.n_in,
        height=es.height,
        width=es.width,
    )


@dataclass(frozen=True)
class TauStats:
    """Per-threshold edge label statistics, None where the denominator is empty."""

    tau: float
    prop_positive: float | None
    recall_positive: float | None
    n_confident: int


def edge_label_counts(
    es: EdgeSet, gt_mask: np.ndarray, taus: list[float]
) -> list[tuple[int, int, int]]:
    """Raw (n_confident, n_positive_confident, n_positive) per tau.

    An edge is positive when the ground-truth mask agrees at both endpoints,
    counting background-background pairs as positive.  Raw counts let a
    caller aggregate over many instances before forming ratios.
    """
    if gt_mask.shape != (es.height, es.width):
        raise ValueError(
            f"gt mask shape {gt_mask.shape} does not match edge set grid "
            f"{(es.height, es.width)}"
        )
    if any(t1 > t2 for t1, t2 in zip(taus, taus[1:])):
        raise ValueError("taus must be sorted ascending")
    gt_flat = np.asarray(gt_mask).ravel() != 0
    positive = gt_flat[es.a] == gt_flat[es.b]
    n_positive = int(np.count_nonzero(positive))
    out = []
    for tau in taus:
        sel = es.similarity >= tau
        n_sel = int(np.count_nonzero(sel))
        n_pos_sel = int(np.count_nonzero(positive & sel))
        out.append((n_sel, n_pos_sel, n_positive))
    return out


def edge_label_stats(es: EdgeSet, gt_mask: np.ndarray, taus: list[float]) -> list[TauStats]:
    """Positive-edge proportion and recall as the similarity threshold rises."""
    rows = []
    for tau, (n_sel, n_pos_sel, n_pos) in zip(taus, edge_label_counts(es, gt_mask, taus)):
        prop = n_pos_sel / n_sel if n_sel > 0 else None
        recall = n_pos_sel / n_pos if n_pos > 0 else None
        rows.append(TauStats(tau=tau, prop_positive=prop, recall_positive=recall, n_confident=n_sel))
    return rows

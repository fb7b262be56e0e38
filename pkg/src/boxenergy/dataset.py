"""COCO-style annotation and image IO, plus mask/report/stats writers.

Only the instances subset actually needed is parsed (images, boxes,
optional polygon or uncompressed-RLE segmentations); unknown JSON fields
are ignored for forward compatibility, and malformed records are skipped
with a logged diagnostic instead of aborting a batch.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .core import BoundingBox, EnergyConfig, InvalidBoxError
from .graph import TauStats
from .optimize import OptimizerConfig

__all__ = [
    "AnnotationRecord",
    "MaskOutputRecord",
    "load_annotations",
    "write_annotations",
    "decode_rle",
    "mask_to_rle",
    "rasterize_polygons",
    "load_image",
    "load_mask_png",
    "write_mask_png",
    "write_overlay_png",
    "write_stats_csv",
    "config_fingerprint",
]

logger = logging.getLogger(__name__)

OVERLAY_COLOR = (0, 255, 0)
OVERLAY_ALPHA = 0.5


@dataclass
class AnnotationRecord:
    """One image's usable annotations: boxes with categories, optional gt masks."""

    image_id: int
    file_name: str
    height: int
    width: int
    boxes: list[tuple[BoundingBox, int]] = field(default_factory=list)
    gt_masks: list[np.ndarray | None] = field(default_factory=list)


@dataclass
class MaskOutputRecord:
    """One produced instance mask plus its energy summary and config hash."""

    image_id: int
    instance_index: int
    mask: np.ndarray
    energy: dict
    config_fingerprint: str


def decode_rle(counts: list[int], height: int, width: int) -> np.ndarray:
    """Decode uncompressed column-major RLE; counts alternate starting with 0s."""
    total = height * width
    if sum(counts) != total:
        raise ValueError(f"RLE counts sum to {sum(counts)}, expected {total}")
    flat = np.zeros(total, dtype=np.uint8)
    pos = 0
    val = 0
    for c in counts:
        if c < 0:
            raise ValueError("RLE counts must be nonnegative")
        flat[pos : pos + c] = val
        pos += c
        val ^= 1
    return flat.reshape((height, width), order="F")


def mask_to_rle(mask: np.ndarray) -> list[int]:
    """Inverse of :func:`decode_rle` for binary masks."""
    flat = (np.asarray(mask) != 0).astype(np.uint8).flatten(order="F")
    changes = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate([[0], changes, [flat.size]])
    runs = [int(r) for r in np.diff(bounds)]
    if flat.size and flat[0] == 1:
        runs.insert(0, 0)
    return runs


def _rasterize_even_odd(pts: np.ndarray, height: int, width: int) -> np.ndarray:
    """Scanline even-odd fill of one polygon over pixel centers."""
    out = np.zeros((height, width), dtype=np.uint8)
    x1s, y1s = pts[:, 0], pts[:, 1]
    x2s, y2s = np.roll(x1s, -1), np.roll(y1s, -1)
    for i in range(height):
        yc = i + 0.5
        crossing = (y1s <= yc) != (y2s <= yc)  # half-open so vertices count once
        if not crossing.any():
            continue
        t = (yc - y1s[crossing]) / (y2s[crossing] - y1s[crossing])
        xs = np.sort(x1s[crossing] + t * (x2s[crossing] - x1s[crossing]))
        for k in range(0, len(xs) - 1, 2):
            # pixel centers j + 0.5 in [xs[k], xs[k+1])
            j0 = int(np.ceil(xs[k] - 0.5))
            j1 = int(np.ceil(xs[k + 1] - 0.5))
            if j1 > 0 and j0 < width:
                out[i, max(j0, 0) : min(j1, width)] = 1
    return out


def rasterize_polygons(polygons: list[list[float]], height: int, width: int) -> np.ndarray:
    """Rasterize COCO polygons ([x0, y0, x1, y1, ...] each); union across polygons."""
    mask = np.zeros((height, width), dtype=np.uint8)
    for poly in polygons:
        pts = np.asarray(poly, dtype=np.float64).reshape(-1, 2)
        if pts.shape[0] < 3:
            continue
        mask |= _rasterize_even_odd(pts, height, width)
    return mask


def _decode_segmentation(seg, height: int, width: int) -> np.ndarray | None:
    if seg is None or seg == []:
        return None
    if isinstance(seg, dict):
        counts = seg.get("counts")
        size = seg.get("size", [height, width])
        if not isinstance(counts, list):
            raise ValueError("compressed RLE is not supported; counts must be a list")
        return decode_rle(counts, int(size[0]), int(size[1]))
    if isinstance(seg, list):
        return rasterize_polygons(seg, height, width)
    raise ValueError(f"unrecognized segmentation payload of type {type(seg)!r}")


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    """Parse a COCO-instances JSON into per-image records.

    Boxes come back as half-open integer corners (outward-rounded); masks
    are decoded from polygons or uncompressed RLE when present.  Malformed
    annotations are skipped with a diagnostic; the batch continues.
    """
    with open(path) as f:
        doc = json.load(f)
    images = {img["id"]: img for img in doc.get("images", [])}
    records: dict[int, AnnotationRecord] = {}
    for ann in doc.get("annotations", []):
        ann_id = ann.get("id")
        image_id = ann.get("image_id")
        img = images.get(image_id)
        if img is None:
            logger.warning("annotation %s: no image entry %s; skipped", ann_id, image_id)
            continue
        h, w = int(img["height"]), int(img["width"])
        try:
            x, y, bw, bh = ann["bbox"]
            if bw <= 0 or bh <= 0:
                raise InvalidBoxError(f"degenerate bbox {ann['bbox']}")
            box = BoundingBox.from_xywh(x, y, bw, bh).clip(h, w)
            gt = _decode_segmentation(ann.get("segmentation"), h, w)
        except (InvalidBoxError, ValueError, KeyError, TypeError) as exc:
            logger.warning("annotation %s on image %s skipped: %s", ann_id, image_id, exc)
            continue
        rec = records.get(image_id)
        if rec is None:
            rec = AnnotationRecord(
                image_id=int(image_id), file_name=img["file_name"], height=h, width=w
            )
            records[image_id] = rec
        rec.boxes.append((box, int(ann.get("category_id", 1))))
        rec.gt_masks.append(gt)
    return [records[k] for k in sorted(records)]


def write_annotations(records: list[AnnotationRecord], path: str | Path) -> None:
    """Serialize records back to COCO-instances JSON (masks as uncompressed RLE)."""
    images = []
    annotations = []
    ann_id = 1
    for rec in records:
        images.append(
            {
                "id": rec.image_id,
                "file_name": rec.file_name,
                "height": rec.height,
                "width": rec.width,
            }
        )
        for (box, category_id), gt in zip(rec.boxes, rec.gt_masks):
            ann = {
                "id": ann_id,
                "image_id": rec.image_id,
                "category_id": category_id,
                "bbox": [box.x0, box.y0, box.width, box.height],
                "iscrowd": 0,
                "area": box.area,
            }
            if gt is not None:
                ann["segmentation"] = {
                    "counts": mask_to_rle(gt),
                    "size": [rec.height, rec.width],
                }
            annotations.append(ann)
            ann_id += 1
    doc = {"images": images, "annotations": annotations, "categories": []}
    with open(path, "w") as f:
        json.dump(doc, f)


def load_image(path: str | Path) -> np.ndarray:
    """Decode a PNG/JPEG into an (H, W, 3) uint8 sRGB array."""
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.uint8)


def load_mask_png(path: str | Path) -> np.ndarray:
    """Read a grayscale mask PNG back to a {0,1} uint8 grid."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"))
    return (arr >= 128).astype(np.uint8)


def write_mask_png(record: MaskOutputRecord, out_dir: str | Path) -> Path:
    """Write one instance mask as 8-bit grayscale (255 foreground, 0 background)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{record.image_id}_{record.instance_index}.png"
    data = (np.asarray(record.mask, dtype=np.uint8) * 255).astype(np.uint8)
    Image.fromarray(data, mode="L").save(path)
    return path


def write_overlay_png(rgb: np.ndarray, mask: np.ndarray, path: str | Path) -> None:
    """Blend the mask over the image at fixed alpha 0.5 on foreground pixels."""
    out = np.asarray(rgb, dtype=np.float64).copy()
    fg = np.asarray(mask) != 0
    color = np.asarray(OVERLAY_COLOR, dtype=np.float64)
    out[fg] = (1.0 - OVERLAY_ALPHA) * out[fg] + OVERLAY_ALPHA * color
    Image.fromarray(np.round(out).astype(np.uint8), mode="RGB").save(path)


def write_stats_csv(rows: list[TauStats], path: str | Path) -> None:
    """Write tau statistics as fixed-precision CSV; None becomes an empty cell."""
    if not rows:
        raise ValueError("stats rows must be nonempty")

    def cell(v: float | None) -> str:
        return "" if v is None else f"{v:.6f}"

    lines = ["tau,prop_positive,recall_positive,n_confident"]
    for r in rows:
        lines.append(
            f"{r.tau:.6f},{cell(r.prop_positive)},{cell(r.recall_positive)},{r.n_confident}"
        )
    Path(path).write_text("\n".join(lines) + "\n")


def config_fingerprint(config: EnergyConfig, opt: OptimizerConfig) -> str:
    """Short stable hash of the full effective configuration."""
    payload = json.dumps(
        {"energy": config.to_dict(), "optimizer": opt.to_dict()}, sort_keys=True
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:12]

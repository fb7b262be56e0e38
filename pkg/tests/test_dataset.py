import json

import numpy as np
import pytest
from PIL import Image

from boxenergy import BoundingBox
from boxenergy.dataset import (
    AnnotationRecord,
    MaskOutputRecord,
    config_fingerprint,
    decode_rle,
    load_annotations,
    load_image,
    load_mask_png,
    mask_to_rle,
    rasterize_polygons,
    write_annotations,
    write_mask_png,
    write_overlay_png,
    write_stats_csv,
)
from boxenergy import EnergyConfig
from boxenergy.graph import TauStats
from boxenergy.optimize import OptimizerConfig


def coco_doc(annotations, height=4, width=5, n_images=1):
    return {
        "images": [
            {"id": i + 1, "file_name": f"im{i+1}.png", "height": height, "width": width}
            for i in range(n_images)
        ],
        "annotations": annotations,
        "categories": [{"id": 1, "name": "thing"}],
        "info": {"description": "unknown fields are ignored"},
    }


def write_doc(tmp_path, doc):
    path = tmp_path / "ann.json"
    path.write_text(json.dumps(doc))
    return path


def test_bbox_xywh_to_corners(tmp_path):
    doc = coco_doc([{"id": 1, "image_id": 1, "category_id": 7, "bbox": [1, 0, 3, 2]}])
    recs = load_annotations(write_doc(tmp_path, doc))
    assert len(recs) == 1
    box, cat = recs[0].boxes[0]
    assert box == BoundingBox(1, 0, 4, 2)
    assert cat == 7
    assert recs[0].gt_masks == [None]


def test_bbox_corner_example():
    assert BoundingBox.from_xywh(10, 20, 5, 8) == BoundingBox(10, 20, 15, 28)


def test_rle_2x2_all_ones():
    assert np.array_equal(decode_rle([0, 4], 2, 2), np.ones((2, 2)))


def test_rle_is_column_major():
    # single 1 at (row 0, col 1) of a 2x3 mask: column-major flat position 2
    mask = np.zeros((2, 3), np.uint8)
    mask[0, 1] = 1
    assert mask_to_rle(mask) == [2, 1, 3]
    assert np.array_equal(decode_rle([2, 1, 3], 2, 3), mask)


def test_rle_roundtrip_random():
    rng = np.random.default_rng(0)
    for _ in range(20):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        mask = rng.integers(0, 2, (h, w)).astype(np.uint8)
        assert np.array_equal(decode_rle(mask_to_rle(mask), h, w), mask)


def test_rle_bad_counts_rejected():
    with pytest.raises(ValueError):
        decode_rle([1, 2], 2, 2)


def test_polygon_square_is_exact():
    mask = rasterize_polygons([[0, 0, 3, 0, 3, 3, 0, 3]], 4, 4)
    expected = np.zeros((4, 4), np.uint8)
    expected[:3, :3] = 1
    assert np.array_equal(mask, expected)


def test_polygon_area_close_to_shoelace_for_convex_shapes():
    rng = np.random.default_rng(1)
    for _ in range(10):
        n = int(rng.integers(3, 9))
        angles = np.sort(rng.uniform(0, 2 * np.pi, n))
        r = rng.uniform(5, 14)
        cx, cy = rng.uniform(15, 25, 2)
        xs = cx + r * np.cos(angles)
        ys = cy + r * np.sin(angles)
        poly = np.stack([xs, ys], axis=1).ravel().tolist()
        mask = rasterize_polygons([poly], 40, 40)
        shoelace = 0.5 * abs(
            float(np.sum(xs * np.roll(ys, -1) - np.roll(xs, -1) * ys))
        )
        assert abs(int(mask.sum()) - shoelace) <= 2 * n


def even_odd_oracle(poly, height, width):
    """Per-pixel ray-casting crossing count; the slow reference for even-odd fill."""
    pts = np.asarray(poly, float).reshape(-1, 2)
    out = np.zeros((height, width), np.uint8)
    for i in range(height):
        for j in range(width):
            x, y = j + 0.5, i + 0.5
            crossings = 0
            for k in range(len(pts)):
                x1, y1 = pts[k]
                x2, y2 = pts[(k + 1) % len(pts)]
                if (y1 <= y) != (y2 <= y):
                    xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
                    if xc > x:
                        crossings += 1
            out[i, j] = crossings % 2
    return out


def test_polygon_matches_even_odd_oracle_including_holes():
    rng = np.random.default_rng(4)
    # keyhole polygon: outer square with an inner square traced in one loop
    ring = [0, 0, 7, 0, 7, 7, 0, 7, 0, 0, 2, 2, 2, 5, 5, 5, 5, 2, 2, 2]
    assert np.array_equal(rasterize_polygons([ring], 8, 8), even_odd_oracle(ring, 8, 8))
    for _ in range(5):
        poly = rng.uniform(0.0, 12.0, size=(int(rng.integers(3, 8)), 2)).ravel().tolist()
        assert np.array_equal(
            rasterize_polygons([poly], 12, 12), even_odd_oracle(poly, 12, 12)
        )


def test_load_skips_malformed_records(tmp_path, caplog):
    doc = coco_doc(
        [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 2, 2]},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, 0, 2]},  # w <= 0
            {"id": 3, "image_id": 99, "category_id": 1, "bbox": [0, 0, 2, 2]},  # no image
            {"id": 4, "image_id": 1, "category_id": 1, "bbox": [4.5, 3.5, 9, 9]},  # clips
            {
                "id": 5,
                "image_id": 1,
                "category_id": 1,
                "bbox": [0, 0, 2, 2],
                "segmentation": {"counts": "compressed-unsupported", "size": [4, 5]},
            },
        ]
    )
    recs = load_annotations(write_doc(tmp_path, doc))
    assert len(recs) == 1
    assert len(recs[0].boxes) == 2  # ids 1 and 4 survive
    assert recs[0].boxes[1][0] == BoundingBox(4, 3, 5, 4)


def test_load_empty_annotation_list(tmp_path):
    assert load_annotations(write_doc(tmp_path, coco_doc([]))) == []


def test_annotation_roundtrip_with_rle_masks(tmp_path):
    rng = np.random.default_rng(2)
    gt = rng.integers(0, 2, (4, 5)).astype(np.uint8)
    rec = AnnotationRecord(
        image_id=3,
        file_name="x.png",
        height=4,
        width=5,
        boxes=[(BoundingBox(1, 0, 4, 3), 2)],
        gt_masks=[gt],
    )
    path = tmp_path / "rt.json"
    write_annotations([rec], path)
    loaded = load_annotations(path)
    assert len(loaded) == 1 and loaded[0].boxes[0][0] == BoundingBox(1, 0, 4, 3)
    assert np.array_equal(loaded[0].gt_masks[0], gt)
    # serialize again: identical boxes and masks
    path2 = tmp_path / "rt2.json"
    write_annotations(loaded, path2)
    again = load_annotations(path2)
    assert again[0].boxes == loaded[0].boxes
    assert np.array_equal(again[0].gt_masks[0], gt)


def test_write_mask_png_roundtrip(tmp_path):
    mask = np.ones((2, 2), np.uint8)
    rec = MaskOutputRecord(
        image_id=7, instance_index=0, mask=mask, energy={}, config_fingerprint="abc"
    )
    path = write_mask_png(rec, tmp_path)
    assert path.name == "7_0.png"
    arr = np.asarray(Image.open(path))
    assert np.all(arr == 255)
    assert np.array_equal(load_mask_png(path), mask)
    # idempotent: write -> load -> write gives identical bytes
    rec2 = MaskOutputRecord(
        image_id=7, instance_index=1, mask=load_mask_png(path), energy={}, config_fingerprint="abc"
    )
    path2 = write_mask_png(rec2, tmp_path)
    assert path.read_bytes() == path2.read_bytes()


def test_overlay_blend_arithmetic(tmp_path):
    rgb = np.full((2, 2, 3), 100, np.uint8)
    mask = np.array([[1, 0], [0, 0]], np.uint8)
    path = tmp_path / "ov.png"
    write_overlay_png(rgb, mask, path)
    out = np.asarray(Image.open(path))
    assert tuple(out[0, 0]) == (50, 178, 50)  # 0.5*100 + 0.5*(0,255,0), rounded
    assert tuple(out[0, 1]) == (100, 100, 100)


def test_stats_csv_format(tmp_path):
    rows = [
        TauStats(0.1, 0.983, 0.75, 1234),
        TauStats(0.9, None, 0.0, 0),
    ]
    path = tmp_path / "stats.csv"
    write_stats_csv(rows, path)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "tau,prop_positive,recall_positive,n_confident"
    assert lines[1] == "0.100000,0.983000,0.750000,1234"
    assert lines[2] == "0.900000,,0.000000,0"
    with pytest.raises(ValueError):
        write_stats_csv([], tmp_path / "empty.csv")


def test_stats_csv_preserves_row_order(tmp_path):
    rows = [TauStats(t, 0.5, 0.5, 1) for t in (0.3, 0.1, 0.2)]
    path = tmp_path / "ordered.csv"
    write_stats_csv(rows, path)
    taus = [line.split(",")[0] for line in path.read_text().strip().split("\n")[1:]]
    assert taus == ["0.300000", "0.100000", "0.200000"]


def test_load_image_roundtrip(tmp_path):
    rng = np.random.default_rng(3)
    rgb = rng.integers(0, 256, (5, 6, 3)).astype(np.uint8)
    path = tmp_path / "img.png"
    Image.fromarray(rgb, mode="RGB").save(path)
    assert np.array_equal(load_image(path), rgb)


def test_config_fingerprint_stable_and_sensitive():
    f1 = config_fingerprint(EnergyConfig(), OptimizerConfig())
    f2 = config_fingerprint(EnergyConfig(), OptimizerConfig())
    f3 = config_fingerprint(EnergyConfig(tau=0.2), OptimizerConfig())
    assert f1 == f2 and f1 != f3 and len(f1) == 12

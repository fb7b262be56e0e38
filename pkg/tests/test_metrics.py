import numpy as np
import pytest

from boxenergy import (
    EnergyConfig,
    box_indicator,
    dice_coefficient,
    iou,
    method_comparison,
    srgb_to_lab,
)
from boxenergy.optimize import OptimizerConfig

from synthscenes import make_scene


def test_iou_examples():
    a = np.array([[1, 1], [0, 0]], np.uint8)
    assert iou(a, a) == 1.0
    b = np.array([[0, 0], [1, 1]], np.uint8)
    assert iou(a, b) == 0.0
    box = np.ones((4, 4), np.uint8)
    half = np.zeros((4, 4), np.uint8)
    half[:, :2] = 1
    assert iou(box, half) == 0.5
    assert iou(np.zeros((2, 2)), np.zeros((2, 2))) == 1.0
    with pytest.raises(ValueError):
        iou(np.ones((2, 2)), np.ones((2, 3)))


def test_iou_symmetric_and_monotone_under_shared_pixels():
    rng = np.random.default_rng(0)
    a = rng.integers(0, 2, (6, 6)).astype(np.uint8)
    b = rng.integers(0, 2, (6, 6)).astype(np.uint8)
    assert iou(a, b) == iou(b, a)
    # adding a pixel to both masks never lowers the IoU
    empty = np.nonzero((a == 0) & (b == 0))
    if empty[0].size:
        a2, b2 = a.copy(), b.copy()
        a2[empty[0][0], empty[1][0]] = 1
        b2[empty[0][0], empty[1][0]] = 1
        assert iou(a2, b2) >= iou(a, b)


def test_dice_equals_2iou_over_1_plus_iou():
    rng = np.random.default_rng(1)
    for _ in range(30):
        a = rng.integers(0, 2, (5, 7)).astype(np.uint8)
        b = rng.integers(0, 2, (5, 7)).astype(np.uint8)
        i = iou(a, b)
        assert np.isclose(dice_coefficient(a, b), 2 * i / (1 + i), rtol=1e-12)
        assert i <= dice_coefficient(a, b) + 1e-15


def test_method_comparison_tags_and_gt_box_case():
    rng = np.random.default_rng(2)
    rgb, gt, box = make_scene(rng, "rect", fill="solid", size=40)
    lab = srgb_to_lab(rgb)
    scores = method_comparison(lab, box, gt, EnergyConfig(), OptimizerConfig(steps=150))
    assert [s.method for s in scores] == ["box_mask", "proj_only", "proj_pairwise"]
    by = {s.method: s for s in scores}
    assert by["box_mask"].iou == 1.0  # gt is exactly its own box


def test_method_comparison_ellipse_full_energy_beats_box():
    rng = np.random.default_rng(3)
    rgb, gt, box = make_scene(rng, "ellipse", fill="solid", size=48)
    lab = srgb_to_lab(rgb)
    scores = method_comparison(lab, box, gt, EnergyConfig(), OptimizerConfig(init="zeros", steps=800))
    by = {s.method: s for s in scores}
    assert 0.7 < by["box_mask"].iou < 0.87  # ellipse fills ~pi/4 of its bbox
    assert by["proj_pairwise"].iou > by["box_mask"].iou

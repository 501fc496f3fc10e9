import numpy as np
import pytest
from hypothesis import given, strategies as st

from dpl import label_ops
from dpl.core_types import UNLABELED
from dpl.metrics import (accumulate, confusion_matrix, miou, per_class_iou, pseudo_quality,
                         write_iou_report, write_quality_report)

from helpers import prob_maps, seeds

# per-class IoUs of the published ResNet101 row, GTA5 -> Cityscapes
PUBLISHED_IOUS = [92.5, 52.8, 86.0, 38.5, 31.7, 36.2, 47.3, 34.9, 85.5, 39.9, 85.2, 62.9,
                  33.9, 86.8, 37.2, 45.3, 20.1, 44.1, 42.4]


def test_published_row_miou():
    assert miou(PUBLISHED_IOUS) == pytest.approx(52.8, abs=0.05)


def test_miou_trivial_cases():
    assert miou([0.37]) == 0.37
    assert miou([0.5] * 7) == 0.5
    assert miou([np.nan, 0.2, 0.4]) == pytest.approx(0.3)
    assert np.isnan(miou([np.nan]))


def test_accumulate_examples():
    y = np.array([[0, 1], [2, 1]], np.uint8)
    cm = accumulate(confusion_matrix(3), y, y)
    assert np.array_equal(cm, np.diag([1, 2, 1]))
    gt = np.full((2, 2), UNLABELED, np.uint8)
    assert not accumulate(confusion_matrix(3), y, gt).any()
    pred = np.array([[0, 1], [2, 2]], np.uint8)
    cm = accumulate(confusion_matrix(3), pred, y)
    assert cm[1, 2] == 1 and cm.sum() == 4 and np.trace(cm) == 3


def test_accumulate_rejects_unlabeled_prediction():
    with pytest.raises(ValueError):
        accumulate(confusion_matrix(2), np.array([[UNLABELED]], np.uint8),
                   np.array([[0]], np.uint8))


def test_iou_examples():
    assert per_class_iou(np.diag([3, 4])).tolist() == [1.0, 1.0]
    ious = per_class_iou(np.array([[3, 1], [1, 5]]))
    assert ious == pytest.approx([0.6, 5 / 7])
    ious = per_class_iou(np.array([[2, 0, 0], [0, 0, 0], [0, 0, 1]]))
    assert np.isnan(ious[1]) and miou(ious) == 1.0


def _random_pair(rng, c, shape=(6, 7)):
    gt = rng.integers(0, c, shape).astype(np.uint8)
    gt[rng.random(shape) < 0.1] = UNLABELED
    return rng.integers(0, c, shape).astype(np.uint8), gt


@given(seeds, st.integers(2, 6))
def test_merge_equals_joint_accumulation(seed, c):
    rng = np.random.default_rng(seed)
    (p1, g1), (p2, g2) = _random_pair(rng, c), _random_pair(rng, c)
    merged = accumulate(confusion_matrix(c), p1, g1) + accumulate(confusion_matrix(c), p2, g2)
    joint = accumulate(confusion_matrix(c), np.stack([p1, p2]), np.stack([g1, g2]))
    assert np.array_equal(merged, joint)


@given(seeds, st.integers(2, 6))
def test_miou_permutation_invariant_and_bounded(seed, c):
    rng = np.random.default_rng(seed)
    pred, gt = _random_pair(rng, c)
    cm = accumulate(confusion_matrix(c), pred, gt)
    perm = rng.permutation(c)
    cm_perm = cm[np.ix_(perm, perm)]
    assert miou(per_class_iou(cm_perm)) == pytest.approx(miou(per_class_iou(cm)), abs=1e-12)
    ious = per_class_iou(cm)
    ok = ious[~np.isnan(ious)]
    assert np.all((ok >= 0) & (ok <= 1))


def test_pseudo_quality_examples():
    gt = np.array([[0, 1], [1, 0]], np.uint8)
    r = pseudo_quality(np.full((2, 2), UNLABELED, np.uint8), gt, 2)
    assert r.pixel_ratio == 0 and np.all(np.isnan(r.class_accuracy))
    assert np.isnan(r.mean_accuracy)
    r = pseudo_quality(gt, gt, 2)
    assert r.pixel_ratio == 1 and r.class_accuracy.tolist() == [1.0, 1.0]
    pseudo = np.array([[0, 0], [1, UNLABELED]], np.uint8)
    r = pseudo_quality(pseudo, gt, 2)
    assert r.pixel_ratio == 0.75
    assert r.overall_accuracy == pytest.approx(2 / 3)
    assert r.selected == 3 and r.total == 4


@given(prob_maps(c=st.just(4)), seeds, st.floats(0, 1), st.floats(0, 1))
def test_pseudo_ratio_monotone_in_threshold(p, seed, a, b):
    lo, hi = sorted((a, b))
    gt = np.random.default_rng(seed).integers(0, 4, p.shape[:-1]).astype(np.uint8)
    r_lo = pseudo_quality(label_ops.mpt_select(p, lo), gt, 4)
    r_hi = pseudo_quality(label_ops.mpt_select(p, hi), gt, 4)
    assert r_hi.pixel_ratio <= r_lo.pixel_ratio
    for r in (r_lo, r_hi):
        assert 0 <= r.pixel_ratio <= 1
        acc = r.class_accuracy[~np.isnan(r.class_accuracy)]
        assert np.all((acc >= 0) & (acc <= 1))


def test_csv_reports(tmp_path):
    cm = np.array([[3, 1], [1, 5]])
    write_iou_report(tmp_path / "iou.csv", cm, ["a", "b"])
    lines = (tmp_path / "iou.csv").read_text().splitlines()
    assert lines[0] == "name,value"
    assert lines[1] == "iou_a,0.600000"
    assert lines[-1].startswith("miou,")
    gt = np.array([[0, 1]], np.uint8)
    r = pseudo_quality(np.array([[0, UNLABELED]], np.uint8), gt, 2)
    write_quality_report(tmp_path / "q.csv", r, ["a", "b"])
    rows = dict(line.split(",") for line in (tmp_path / "q.csv").read_text().splitlines()[1:])
    assert rows["acc_a"] == "1.000000" and rows["acc_b"] == ""
    assert rows["pixel_ratio"] == "0.500000"

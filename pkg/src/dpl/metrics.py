"""Segmentation metrics and pseudo-label quality analysis."""
import csv
from dataclasses import dataclass

import numpy as np

from .core_types import UNLABELED, check_same_shape


def confusion_matrix(num_classes):
    return np.zeros((num_classes, num_classes), dtype=np.int64)


def accumulate(cm, pred, gt):
    """Return ``cm`` plus the counts of (gt, pred) pairs; UNLABELED gt is skipped."""
    check_same_shape(pred, gt)
    pred = np.asarray(pred).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    n = cm.shape[0]
    keep = gt != UNLABELED
    g, p = gt[keep].astype(np.int64), pred[keep].astype(np.int64)
    if np.any(p >= n):
        raise ValueError("prediction must be fully labeled where ground truth is")
    return cm + np.bincount(n * g + p, minlength=n * n).reshape(n, n)


def per_class_iou(cm):
    """IoU per class; NaN marks classes with an empty union."""
    cm = np.asarray(cm, dtype=np.float64)
    inter = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(union > 0, inter / union, np.nan)


def miou(ious):
    ious = np.asarray(ious, dtype=np.float64)
    defined = ious[~np.isnan(ious)]
    if defined.size == 0:
        return float("nan")
    return float(defined.mean())


@dataclass
class PseudoQualityReport:
    class_accuracy: np.ndarray  # NaN where a class has no selected pixel
    mean_accuracy: float
    overall_accuracy: float
    pixel_ratio: float
    selected: int
    total: int


def pseudo_quality(pseudo, gt, num_classes):
    """Accuracy of selected pseudo labels and the fraction of pixels selected.

    Per-class accuracy is indexed by the pseudo-label class, i.e. the
    precision of each emitted label.
    """
    check_same_shape(pseudo, gt)
    pseudo = np.asarray(pseudo).reshape(-1)
    gt = np.asarray(gt).reshape(-1)
    valid = gt != UNLABELED
    sel = valid & (pseudo != UNLABELED)
    correct = sel & (pseudo == gt)
    acc = np.full(num_classes, np.nan)
    for c in range(num_classes):
        n_c = np.count_nonzero(sel & (pseudo == c))
        if n_c:
            acc[c] = np.count_nonzero(correct & (pseudo == c)) / n_c
    total = int(valid.sum())
    selected = int(sel.sum())
    return PseudoQualityReport(
        class_accuracy=acc,
        mean_accuracy=miou(acc),
        overall_accuracy=correct.sum() / selected if selected else float("nan"),
        pixel_ratio=selected / total if total else 0.0,
        selected=selected,
        total=total,
    )


def _fmt(v):
    return "" if v is None or np.isnan(v) else f"{v:.6f}"


def write_iou_report(path, cm, class_names=None):
    ious = per_class_iou(cm)
    names = class_names or [str(c) for c in range(len(ious))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value"])
        for name, v in zip(names, ious):
            w.writerow([f"iou_{name}", _fmt(v)])
        w.writerow(["miou", _fmt(miou(ious))])
    return ious


def write_quality_report(path, report, class_names=None):
    names = class_names or [str(c) for c in range(len(report.class_accuracy))]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["name", "value"])
        for name, v in zip(names, report.class_accuracy):
            w.writerow([f"acc_{name}", _fmt(v)])
        w.writerow(["mean_accuracy", _fmt(report.mean_accuracy)])
        w.writerow(["pixel_ratio", _fmt(report.pixel_ratio)])

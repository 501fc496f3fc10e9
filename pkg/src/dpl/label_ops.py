"""Label-space procedures: label correction, pseudo-label selection, fusion.

Every function works per pixel over the last (class) axis and accepts any
number of leading axes, so whole batches can be processed at once.
"""
import numpy as np

from .core_types import UNLABELED, GridError, argmax_labels, check_same_shape

STRATEGIES = ("weighted", "max", "joint", "spplg")


def correct_labels(y_s, p_translated, delta=0.3):
    """Replace ground truth by the prediction on the translated image where
    the prediction beats the ground-truth class by more than ``delta``."""
    y_s = np.asarray(y_s)
    p = np.asarray(p_translated)
    if y_s.shape != p.shape[:-1]:
        raise GridError(f"shape mismatch: labels {y_s.shape}, probs {p.shape}")
    if delta < 0:
        raise ValueError("delta must be >= 0")
    c_hat = argmax_labels(p)
    labeled = y_s != UNLABELED
    c = np.where(labeled, y_s, 0).astype(np.intp)
    p_hat = np.take_along_axis(p, c_hat[..., None].astype(np.intp), axis=-1)[..., 0]
    p_gt = np.take_along_axis(p, c[..., None], axis=-1)[..., 0]
    replace = labeled & (p_hat - p_gt > delta)
    return np.where(replace, c_hat, y_s).astype(np.uint8)


def correction_mask(y_s, p_translated, delta=0.3):
    """Boolean mask of pixels :func:`correct_labels` would change."""
    return correct_labels(y_s, p_translated, delta) != np.asarray(y_s)


def fuse_weighted(p_t, p_s, alpha=0.5):
    check_same_shape(p_t, p_s)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    # explicit endpoints keep alpha in {0, 1} bit-exact
    if alpha == 1.0:
        return np.array(p_t, copy=True)
    if alpha == 0.0:
        return np.array(p_s, copy=True)
    # written as an offset from p_s so that p_t == p_s returns p_t exactly
    p_s = np.asarray(p_s)
    return p_s + alpha * (np.asarray(p_t) - p_s)


def mpt_select(p, lam=0.9):
    """Max-probability threshold: argmax where its probability exceeds ``lam``."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    p = np.asarray(p)
    labels = argmax_labels(p)
    keep = p.max(axis=-1) > lam
    return np.where(keep, labels, UNLABELED).astype(np.uint8)


spplg = mpt_select


def dpplg_weighted(p_t, p_s, alpha=0.5, lam=0.9):
    return mpt_select(fuse_weighted(p_t, p_s, alpha), lam)


def dpplg_max(p_t, p_s, lam=0.9):
    check_same_shape(p_t, p_s)
    p_t = np.asarray(p_t)
    p_s = np.asarray(p_s)
    use_s = p_s.max(axis=-1) > p_t.max(axis=-1)  # ties stay on path-T
    chosen = np.where(use_s[..., None], p_s, p_t)
    return mpt_select(chosen, lam)


def dpplg_joint(p_t, p_s, lam=0.9):
    check_same_shape(p_t, p_s)
    y_t = mpt_select(p_t, lam)
    y_s = mpt_select(p_s, lam)
    agree = (y_t == y_s) & (y_t != UNLABELED)
    return np.where(agree, y_t, UNLABELED).astype(np.uint8)


def fuse_inference(p_t, p_s):
    check_same_shape(p_t, p_s)
    return (np.asarray(p_s) + np.asarray(p_t)) / 2


def generate_pseudo_labels(strategy, p_t, p_s, alpha=0.5, lam=0.9):
    """Pseudo labels for both paths as ``(labels_for_T, labels_for_S)``.

    The dual-path strategies share one label map; ``spplg`` lets each path
    threshold its own prediction.
    """
    if strategy == "weighted":
        y = dpplg_weighted(p_t, p_s, alpha, lam)
    elif strategy == "max":
        y = dpplg_max(p_t, p_s, lam)
    elif strategy == "joint":
        y = dpplg_joint(p_t, p_s, lam)
    elif strategy == "spplg":
        return spplg(p_t, lam), spplg(p_s, lam)
    else:
        raise ValueError(f"unknown pseudo-label strategy {strategy!r}")
    return y, y

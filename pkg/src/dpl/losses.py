"""Loss functions with closed-form gradients.

Each loss returns a :class:`LossValue` holding the scalar and the gradient
with respect to every differentiable argument, keyed by argument name.
Batched inputs (leading axis) are averaged over the batch.
"""
from dataclasses import dataclass, field

import numpy as np

from .core_types import UNLABELED, GridError, check_same_shape


@dataclass
class LossValue:
    value: float
    grads: dict = field(default_factory=dict)
    parts: dict = field(default_factory=dict)  # weighted term values, set by combine()

    def scaled(self, w):
        return LossValue(w * self.value, {k: w * g for k, g in self.grads.items()})


def combine(**terms):
    """Weighted sum of named losses.

    Each keyword maps a term name to ``(weight, LossValue)``; gradient keys in
    the result are ``"<term>.<arg>"``.
    """
    value = 0.0
    grads = {}
    parts = {}
    for name, (w, lv) in terms.items():
        parts[name] = w * lv.value
        value += parts[name]
        for k, g in lv.grads.items():
            grads[f"{name}.{k}"] = w * g
    return LossValue(value, grads, parts)


def seg_cross_entropy(scores, y, normalize="pixels"):
    """Per-pixel cross entropy of softmax(scores) against hard labels.

    UNLABELED pixels contribute nothing. With ``normalize="pixels"`` the sum is
    divided by the total pixel count, labeled or not; ``"labeled"`` divides by
    the number of labeled pixels instead.
    """
    scores = np.asarray(scores, dtype=np.float64)
    y = np.asarray(y)
    if scores.shape[:-1] != y.shape:
        raise GridError(f"shape mismatch: scores {scores.shape}, labels {y.shape}")
    labeled = y != UNLABELED
    if normalize == "pixels":
        denom = y.size
    elif normalize == "labeled":
        denom = max(int(labeled.sum()), 1)
    else:
        raise ValueError(f"unknown normalizer {normalize!r}")

    z = scores - scores.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    log_p = z - log_norm
    idx = np.where(labeled, y, 0).astype(np.intp)[..., None]
    nll = -np.take_along_axis(log_p, idx, axis=-1)[..., 0]
    value = float(np.sum(nll, where=labeled) / denom)

    onehot = np.zeros_like(scores)
    np.put_along_axis(onehot, idx, 1.0, axis=-1)
    grad = (np.exp(log_p) - onehot) * labeled[..., None] / denom
    return LossValue(value, {"scores": grad})


def perceptual_loss(f_a, f_b):
    """Mean squared distance between two feature maps."""
    check_same_shape(f_a, f_b)
    diff = np.asarray(f_a, dtype=np.float64) - np.asarray(f_b, dtype=np.float64)
    n = diff.size
    g = 2.0 * diff / n
    return LossValue(float(np.sum(diff * diff) / n), {"f_a": g, "f_b": -g})


def dual_perceptual_loss(f_T_of_Sp, f_S_of_S, f_T_of_T, f_S_of_Tp):
    """Perceptual distance of both translated/raw pairs, each pair measured by
    the segmenter aligned with its own domain.

    Only the translated-image features receive gradient; raw-image features
    are fixed targets.
    """
    a = perceptual_loss(f_T_of_Sp, f_S_of_S)
    b = perceptual_loss(f_S_of_Tp, f_T_of_T)
    return LossValue(a.value + b.value,
                     {"f_T_of_Sp": a.grads["f_a"], "f_S_of_Tp": b.grads["f_a"]})


def gan_loss_ls(d_real, d_fake, role):
    """Least-squares GAN objective on raw discriminator scores."""
    d_real = np.asarray(d_real, dtype=np.float64)
    d_fake = np.asarray(d_fake, dtype=np.float64)
    if role == "discriminator":
        value = np.mean((d_real - 1.0) ** 2) + np.mean(d_fake ** 2)
        grads = {"d_real": 2.0 * (d_real - 1.0) / d_real.size,
                 "d_fake": 2.0 * d_fake / d_fake.size}
    elif role == "generator":
        value = np.mean((d_fake - 1.0) ** 2)
        grads = {"d_fake": 2.0 * (d_fake - 1.0) / d_fake.size}
    else:
        raise ValueError(f"unknown role {role!r}")
    return LossValue(float(value), grads)


def recon_loss(x, x_cycle):
    """Mean absolute cycle-reconstruction error; subgradient 0 at equality."""
    check_same_shape(x, x_cycle)
    diff = np.asarray(x_cycle, dtype=np.float64) - np.asarray(x, dtype=np.float64)
    n = diff.size
    return LossValue(float(np.abs(diff).sum() / n), {"x_cycle": np.sign(diff) / n})


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def adv_feature_loss(d_source_like, d_target_like, role):
    """Non-saturating BCE on feature-discriminator scores.

    The discriminator labels target-like inputs 1 and source-like inputs 0;
    the segmenter (generator role) pushes its source-like outputs toward 1.
    """
    ds = np.asarray(d_source_like, dtype=np.float64)
    dt = np.asarray(d_target_like, dtype=np.float64)
    if role == "discriminator":
        # -log sigmoid(d) = softplus(-d); -log(1 - sigmoid(d)) = softplus(d)
        value = np.mean(_softplus(-dt)) + np.mean(_softplus(ds))
        grads = {"d_target_like": -_sigmoid(-dt) / dt.size,
                 "d_source_like": _sigmoid(ds) / ds.size}
    elif role == "generator":
        value = np.mean(_softplus(-ds))
        grads = {"d_source_like": -_sigmoid(-ds) / ds.size}
    else:
        raise ValueError(f"unknown role {role!r}")
    return LossValue(float(value), grads)


def dpit_total(gan_s, gan_t, recon_s, recon_t, dual_per,
               lambda_recon=10.0, lambda_dualper=0.1):
    return combine(gan_s=(1.0, gan_s), gan_t=(1.0, gan_t),
                   recon_s=(lambda_recon, recon_s), recon_t=(lambda_recon, recon_t),
                   dual_per=(lambda_dualper, dual_per))


def warmup_T_total(seg_Sp, seg_T, adv, lambda_adv=1e-3):
    return combine(seg_Sp=(1.0, seg_Sp), seg_T=(1.0, seg_T), adv=(lambda_adv, adv))


def dual_seg_total(seg_T_Sp, seg_T_T, seg_S_S, seg_S_Tp, adv_T, adv_S, lambda_adv=1e-3):
    """Both paths' segmentation objective.

    Gradient keys are prefixed by the path (``T_`` or ``S_``) whose model the
    term trains; no term crosses paths.
    """
    return combine(T_seg_Sp=(1.0, seg_T_Sp), T_seg_T=(1.0, seg_T_T),
                   S_seg_S=(1.0, seg_S_S), S_seg_Tp=(1.0, seg_S_Tp),
                   T_adv=(lambda_adv, adv_T), S_adv=(lambda_adv, adv_S))

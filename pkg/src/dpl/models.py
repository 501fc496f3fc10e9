"""Toy differentiable models with hand-written backward passes.

* segmenter: linear classifier over 12 per-pixel features
* translator: affine colour transform clamped to [0, 1]
* image discriminator: linear score over 9 global image statistics
* feature discriminator: linear score over the per-class mean of a softmax map

All forward functions take an optional leading batch axis. Backward functions
take the upstream gradient of the forward output and return parameter
gradients (and the input gradient where a caller needs it).
"""
import copy
from dataclasses import dataclass, fields

import numpy as np

NUM_FEATURES = 12
# smoothing inside square roots keeps std / gradient-magnitude features
# differentiable at zero while a constant image still maps to exactly 0
EPS = 1e-2
_SQRT_EPS = np.sqrt(EPS)


@dataclass
class SegmenterParams:
    weight: np.ndarray  # (K, C)
    bias: np.ndarray  # (C,)


@dataclass
class TranslatorParams:
    matrix: np.ndarray  # (3, 3), out = matrix @ rgb + bias
    bias: np.ndarray  # (3,)


@dataclass
class ImageDiscParams:
    weight: np.ndarray  # (9,)
    bias: np.ndarray  # scalar, shape ()


@dataclass
class FeatDiscParams:
    weight: np.ndarray  # (C,)
    bias: np.ndarray  # scalar, shape ()


def param_items(params):
    return [(f.name, getattr(params, f.name)) for f in fields(params)]


def sgd_step(params, grads, lr):
    """Return new params ``p - lr * g``; ``grads`` has the same type as ``params``."""
    out = {}
    for name, p in param_items(params):
        out[name] = p - lr * getattr(grads, name)
    return type(params)(**out)


def clone_params(params):
    return copy.deepcopy(params)


# ---------------------------------------------------------------- init


def init_segmenter(num_classes, rng, scale=0.01):
    return SegmenterParams(weight=scale * rng.standard_normal((NUM_FEATURES, num_classes)),
                           bias=np.zeros(num_classes))


def init_translator(rng, scale=0.05):
    return TranslatorParams(matrix=np.eye(3) + scale * rng.standard_normal((3, 3)),
                            bias=scale * rng.standard_normal(3))


def init_image_disc(rng, scale=0.01):
    return ImageDiscParams(weight=scale * rng.standard_normal(9), bias=np.zeros(()))


def init_feat_disc(num_classes, rng, scale=0.01):
    return FeatDiscParams(weight=scale * rng.standard_normal(num_classes), bias=np.zeros(()))


# ---------------------------------------------------------------- helpers


def _pad_edge(x):
    """Clamp-to-edge pad by one pixel along the two spatial axes (-3, -2)."""
    pad = [(0, 0)] * (x.ndim - 3) + [(1, 1), (1, 1), (0, 0)]
    return np.pad(x, pad, mode="edge")


def _unpad_edge(g):
    """Adjoint of :func:`_pad_edge`: fold border gradients back onto the edge."""
    g = g.copy()
    g[..., 1, :, :] += g[..., 0, :, :]
    g[..., -2, :, :] += g[..., -1, :, :]
    g[..., :, 1, :] += g[..., :, 0, :]
    g[..., :, -2, :] += g[..., :, -1, :]
    return g[..., 1:-1, 1:-1, :]


_OFFSETS = [(di, dj) for di in range(3) for dj in range(3)]


def _window_mean(xp, h, w):
    return sum(xp[..., di:di + h, dj:dj + w, :] for di, dj in _OFFSETS) / 9.0


def _window_var(xp, x, h, w):
    """3x3 window variance, from moments taken relative to the window centre
    so flat regions give exactly 0."""
    s1 = s2 = 0.0
    for di, dj in _OFFSETS:
        d = xp[..., di:di + h, dj:dj + w, :] - x
        s1 = s1 + d
        s2 = s2 + d * d
    m = s1 / 9.0
    return s2 / 9.0 - m * m


def _window_scatter(g, h, w):
    """Adjoint of :func:`_window_mean` on the padded grid."""
    shape = g.shape[:-3] + (h + 2, w + 2, g.shape[-1])
    gp = np.zeros(shape)
    for di, dj in _OFFSETS:
        gp[..., di:di + h, dj:dj + w, :] += g / 9.0
    return gp


def _smooth_abs(d):
    return np.sqrt(d * d + EPS) - _SQRT_EPS


def _smooth_abs_grad(d):
    return d / np.sqrt(d * d + EPS)


# ---------------------------------------------------------------- features


def extract_features(img):
    """Per-pixel features (..., H, W, 12).

    Channels: RGB, 3x3 window mean per channel, 3x3 window std per channel,
    horizontal central-difference magnitude per channel. Windows use
    clamp-to-edge padding.
    """
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    xp = _pad_edge(x)
    mean = _window_mean(xp, h, w)
    var = np.maximum(_window_var(xp, x, h, w), 0.0)
    std = np.sqrt(var + EPS) - _SQRT_EPS
    dx = 0.5 * (xp[..., 1:-1, 2:, :] - xp[..., 1:-1, :-2, :])
    grad = _smooth_abs(dx)
    return np.concatenate([x, mean, std, grad], axis=-1)


def features_backward(img, g_feat):
    """Gradient with respect to the image given the gradient on the features."""
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    xp = _pad_edge(x)
    g_rgb, g_mean, g_std, g_grad = np.split(g_feat, 4, axis=-1)

    mean = _window_mean(xp, h, w)
    var_raw = _window_var(xp, x, h, w)
    var = np.maximum(var_raw, 0.0)
    # d std / d var, zero where the clamp at 0 is active
    g_var = np.where(var_raw > 0, g_std / (2.0 * np.sqrt(var + EPS)), 0.0)
    # var = E[x^2] - E[x]^2; the centre shift in _window_var leaves it unchanged
    g_mean_total = g_mean - 2.0 * mean * g_var
    gp = _window_scatter(g_mean_total, h, w) + 2.0 * xp * _window_scatter(g_var, h, w)

    dx = 0.5 * (xp[..., 1:-1, 2:, :] - xp[..., 1:-1, :-2, :])
    g_dx = 0.5 * g_grad * _smooth_abs_grad(dx)
    gp[..., 1:-1, 2:, :] += g_dx
    gp[..., 1:-1, :-2, :] -= g_dx

    return g_rgb + _unpad_edge(gp)


# ---------------------------------------------------------------- segmenter


def segmenter_forward(params, img, feats=None):
    """Score map (..., H, W, C). ``feats`` may be passed to skip extraction."""
    if feats is None:
        feats = extract_features(img)
    return feats @ params.weight + params.bias


def segmenter_backward(params, img, g_scores, feats=None, need_input=False):
    """Parameter gradients, plus the image gradient if ``need_input``."""
    if feats is None:
        feats = extract_features(img)
    k = feats.shape[-1]
    c = g_scores.shape[-1]
    grads = SegmenterParams(
        weight=feats.reshape(-1, k).T @ g_scores.reshape(-1, c),
        bias=g_scores.reshape(-1, c).sum(axis=0),
    )
    if not need_input:
        return grads
    g_img = features_backward(img, g_scores @ params.weight.T)
    return grads, g_img


def softmax_backward(p, g_p):
    """Gradient on scores given probabilities ``p`` and the gradient on ``p``."""
    return p * (g_p - np.sum(p * g_p, axis=-1, keepdims=True))


# ---------------------------------------------------------------- translator


def translator_pre(params, img):
    return np.asarray(img, dtype=np.float64) @ params.matrix.T + params.bias


def translator_forward(params, img):
    return np.clip(translator_pre(params, img), 0.0, 1.0)


def translator_backward(params, img, g_out):
    """Returns ``(TranslatorParams grads, image grad)``.

    The clamp passes gradient only where the pre-activation is strictly
    inside (0, 1).
    """
    x = np.asarray(img, dtype=np.float64)
    pre = translator_pre(params, x)
    g_pre = np.where((pre > 0.0) & (pre < 1.0), g_out, 0.0)
    g2 = g_pre.reshape(-1, 3)
    grads = TranslatorParams(matrix=g2.T @ x.reshape(-1, 3), bias=g2.sum(axis=0))
    return grads, g_pre @ params.matrix


# ---------------------------------------------------------------- discriminators


def image_stats(img):
    """Per-image statistics (..., 9): channel mean, std, mean |d/dx|."""
    x = np.asarray(img, dtype=np.float64)
    mean = x.mean(axis=(-3, -2))
    var = np.maximum((x * x).mean(axis=(-3, -2)) - mean * mean, 0.0)
    std = np.sqrt(var + EPS) - _SQRT_EPS
    dx = x[..., :, 1:, :] - x[..., :, :-1, :]
    grad = _smooth_abs(dx).mean(axis=(-3, -2))
    return np.concatenate([mean, std, grad], axis=-1)


def image_stats_backward(img, g_stats):
    x = np.asarray(img, dtype=np.float64)
    h, w = x.shape[-3], x.shape[-2]
    n = h * w
    g_mean, g_std, g_grad = np.split(g_stats, 3, axis=-1)
    mean = x.mean(axis=(-3, -2))
    var_raw = (x * x).mean(axis=(-3, -2)) - mean * mean
    var = np.maximum(var_raw, 0.0)
    g_var = np.where(var_raw > 0, g_std / (2.0 * np.sqrt(var + EPS)), 0.0)
    exp = (..., None, None, slice(None))
    g_x = (g_mean - 2.0 * mean * g_var)[exp] / n + 2.0 * x * g_var[exp] / n
    if w > 1:
        dx = x[..., :, 1:, :] - x[..., :, :-1, :]
        g_dx = g_grad[exp] / (h * (w - 1)) * _smooth_abs_grad(dx)
        g_x[..., :, 1:, :] += g_dx
        g_x[..., :, :-1, :] -= g_dx
    return g_x


def image_disc_forward(params, img):
    return image_stats(img) @ params.weight + params.bias


def image_disc_backward(params, img, g_score, need_input=False):
    g_score = np.asarray(g_score, dtype=np.float64)
    stats = image_stats(img)
    grads = ImageDiscParams(weight=(stats * g_score[..., None]).reshape(-1, 9).sum(axis=0),
                            bias=np.asarray(g_score.sum()))
    if not need_input:
        return grads
    return grads, image_stats_backward(img, g_score[..., None] * params.weight)


def feat_disc_forward(params, probs):
    """Score per image from the spatial mean of its softmax map."""
    return np.asarray(probs).mean(axis=(-3, -2)) @ params.weight + params.bias


def feat_disc_backward(params, probs, g_score, need_input=False):
    g_score = np.asarray(g_score, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[-1]
    m = probs.mean(axis=(-3, -2))
    grads = FeatDiscParams(weight=(m * g_score[..., None]).reshape(-1, c).sum(axis=0),
                           bias=np.asarray(g_score.sum()))
    if not need_input:
        return grads
    h, w = probs.shape[-3], probs.shape[-2]
    g_m = g_score[..., None] * params.weight
    g_probs = np.broadcast_to(g_m[..., None, None, :] / (h * w), probs.shape).copy()
    return grads, g_probs

"""Dual-path training: warm-up, dual-path translation, dual-path adaptive
segmentation, orchestrated as warmup_source -> warmup_target -> train_dpit ->
N x dpas_iteration.
"""
import csv
import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import label_ops, losses
from . import models as M
from .checkpoint import load_params, save_params
from .config import dump_config
from .core_types import UNLABELED, Kind, argmax_labels, load_tensor, save_tensor, softmax
from .data_synth import gen_source, gen_target, read_manifest
from .metrics import accumulate, confusion_matrix, miou, per_class_iou, pseudo_quality

log = logging.getLogger(__name__)

LOG_COLUMNS = ["phase", "epoch", "loss_total", "loss_seg", "loss_adv", "loss_gan",
               "loss_recon", "loss_dualper", "loss_disc", "miou_s", "miou_t",
               "pseudo_count", "replaced_frac"]


class DivergenceError(RuntimeError):
    pass


class DataError(RuntimeError):
    pass


# ---------------------------------------------------------------- data


@dataclass
class Dataset:
    src: np.ndarray  # (N, H, W, 3)
    src_lbl: np.ndarray  # (N, H, W)
    tgt: np.ndarray
    eval_img: np.ndarray
    eval_lbl: np.ndarray
    manifest: object = None

    @property
    def num_classes(self):
        return self.manifest.spec.num_classes if self.manifest else 4


def _load_stack(paths):
    return np.stack([load_tensor(p)[0] for p in paths])


def load_dataset(root):
    root = Path(root)
    if not (root / "manifest.txt").exists():
        raise DataError(f"no dataset at {root} (manifest.txt missing)")
    man = read_manifest(root)
    src = sorted((root / "source").glob("img_*.dplt"))
    src_lbl = sorted((root / "source").glob("lbl_*.dplt"))
    tgt = sorted((root / "target").glob("img_*.dplt"))
    ev = sorted((root / "eval").glob("img_*.dplt"))
    ev_lbl = sorted((root / "eval").glob("lbl_*.dplt"))
    if not (src and tgt and ev) or len(src) != len(src_lbl) or len(ev) != len(ev_lbl):
        raise DataError(f"incomplete dataset at {root}")
    return Dataset(src=_load_stack(src).astype(np.float64), src_lbl=_load_stack(src_lbl),
                   tgt=_load_stack(tgt).astype(np.float64),
                   eval_img=_load_stack(ev).astype(np.float64), eval_lbl=_load_stack(ev_lbl),
                   manifest=man)


def build_dataset(manifest):
    """Same arrays :func:`load_dataset` returns, generated in memory."""
    spec = manifest.spec
    src = [gen_source(spec, i) for i in range(manifest.n_source)]
    tgt = [gen_target(spec, i, "train")[0] for i in range(manifest.n_target)]
    ev = [gen_target(spec, i, "eval") for i in range(manifest.n_eval)]
    return Dataset(src=np.stack([a for a, _ in src]).astype(np.float64),
                   src_lbl=np.stack([b for _, b in src]),
                   tgt=np.stack(tgt).astype(np.float64),
                   eval_img=np.stack([a for a, _ in ev]).astype(np.float64),
                   eval_lbl=np.stack([b for _, b in ev]), manifest=manifest)


# ---------------------------------------------------------------- small helpers


def _rng(cfg, phase):
    return np.random.default_rng([cfg.hp.seed, phase])


def _batches(rng, n, batch_size):
    order = rng.permutation(n)
    return [order[i:i + batch_size] for i in range(0, n, batch_size)]


def _paired_batches(rng, n_a, n_b, batch_size):
    """Aligned minibatches over two sets of (possibly) different sizes."""
    a = _batches(rng, n_a, batch_size)
    b_order = rng.permutation(n_b)
    return [(ia, b_order[np.arange(k * batch_size, k * batch_size + len(ia)) % n_b])
            for k, ia in enumerate(a)]


def _check_finite(value, phase):
    if not np.isfinite(value):
        raise DivergenceError(f"non-finite loss in phase {phase}")


def _check_params(params, phase):
    if not all(np.all(np.isfinite(v)) for _, v in M.param_items(params)):
        raise DivergenceError(f"non-finite parameters in phase {phase}")


def round_f32(params):
    """Params as they come back from a checkpoint."""
    with np.errstate(over="ignore"):
        out = type(params)(**{k: np.asarray(v, dtype=np.float32).astype(np.float64)
                              for k, v in M.param_items(params)})
    _check_params(out, "checkpoint")
    return out


def predict_probs(m, imgs, feats=None):
    return softmax(M.segmenter_forward(m, imgs, feats))


def evaluate(m, imgs, gts, num_classes):
    pred = argmax_labels(predict_probs(m, imgs))
    cm = accumulate(confusion_matrix(num_classes), pred, gts)
    return miou(per_class_iou(cm))


def label_hash(*arrays):
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()[:16]


class MetricsLog:
    def __init__(self):
        self.rows = []

    def add(self, phase, epoch, **values):
        row = {"phase": phase, "epoch": epoch}
        row.update(values)
        self.rows.append(row)
        log.info("%s epoch %s: %s", phase, epoch,
                 ", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}"
                           for k, v in values.items()))

    def write(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
            w.writeheader()
            for row in self.rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


# ---------------------------------------------------------------- segmenter objective


def segmenter_objective(m, disc, feats_a, y_a, feats_b=None, y_b=None,
                        lambda_adv=0.0, normalize="pixels"):
    """Segmentation loss on a source-like batch ``a`` and optional target-like
    batch ``b``, plus the adversarial generator term on ``a``.

    Returns ``(LossValue, SegmenterParams grads, probs_a, probs_b)``.
    """
    scores_a = M.segmenter_forward(m, None, feats_a)
    seg_a = losses.seg_cross_entropy(scores_a, y_a, normalize)
    g_a = seg_a.grads["scores"]
    probs_a = softmax(scores_a)
    terms = {"seg_a": (1.0, seg_a)}
    if disc is not None and lambda_adv > 0:
        d_a = M.feat_disc_forward(disc, probs_a)
        adv = losses.adv_feature_loss(d_a, np.zeros_like(d_a), "generator")
        _, g_probs = M.feat_disc_backward(disc, probs_a, adv.grads["d_source_like"],
                                          need_input=True)
        g_a = g_a + lambda_adv * M.softmax_backward(probs_a, g_probs)
        terms["adv"] = (lambda_adv, adv)
    grads = M.segmenter_backward(m, None, g_a, feats_a)
    probs_b = None
    if feats_b is not None:
        scores_b = M.segmenter_forward(m, None, feats_b)
        seg_b = losses.seg_cross_entropy(scores_b, y_b, normalize)
        gb = M.segmenter_backward(m, None, seg_b.grads["scores"], feats_b)
        grads = M.SegmenterParams(grads.weight + gb.weight, grads.bias + gb.bias)
        probs_b = softmax(scores_b)
        terms["seg_b"] = (1.0, seg_b)
    return losses.combine(**terms), grads, probs_a, probs_b


def feat_disc_step(disc, probs_a, probs_b, lr):
    """One discriminator update: ``b`` (target-like) labeled 1, ``a`` labeled 0."""
    d_a = M.feat_disc_forward(disc, probs_a)
    d_b = M.feat_disc_forward(disc, probs_b)
    loss = losses.adv_feature_loss(d_a, d_b, "discriminator")
    ga = M.feat_disc_backward(disc, probs_a, loss.grads["d_source_like"])
    gb = M.feat_disc_backward(disc, probs_b, loss.grads["d_target_like"])
    g = M.FeatDiscParams(ga.weight + gb.weight, ga.bias + gb.bias)
    return M.sgd_step(disc, g, lr), loss.value


def _seg_epoch(cfg, rng, m, disc, feats_a, y_a, feats_b=None, y_b=None, phase=""):
    """One epoch of segmenter updates, alternating with feature-discriminator
    updates when an adversarial term is active."""
    hp = cfg.hp
    use_adv = feats_b is not None and disc is not None and hp.lambda_adv > 0
    n_b = len(feats_b) if feats_b is not None else 1
    tot = dict(loss_total=0.0, loss_seg=0.0, loss_adv=0.0, loss_disc=0.0)
    batches = _paired_batches(rng, len(feats_a), n_b, cfg.batch_size)
    for ia, ib in batches:
        fb = feats_b[ib] if feats_b is not None else None
        yb = y_b[ib] if feats_b is not None else None
        lv, g, pa, pb = segmenter_objective(m, disc if use_adv else None, feats_a[ia], y_a[ia],
                                            fb, yb, hp.lambda_adv, cfg.ce_normalize)
        _check_finite(lv.value, phase)
        m = M.sgd_step(m, g, hp.lr_seg)
        adv = lv.parts.get("adv", 0.0)
        if use_adv:
            for _ in range(cfg.disc_steps):
                disc, dl = feat_disc_step(disc, pa, pb, hp.lr_feat_disc)
            tot["loss_disc"] += dl / len(batches)
        tot["loss_total"] += lv.value / len(batches)
        tot["loss_seg"] += (lv.value - adv) / len(batches)
        tot["loss_adv"] += adv / len(batches)
    _check_params(m, phase)
    return m, disc, tot


def warmup_source(cfg, data, metrics=None):
    """Supervised training of the source segmenter."""
    metrics = metrics if metrics is not None else MetricsLog()
    rng = _rng(cfg, 1)
    c = data.num_classes
    m = M.init_segmenter(c, rng)
    feats = M.extract_features(data.src)
    for epoch in range(cfg.epochs_warmup_s):
        m, _, tot = _seg_epoch(cfg, rng, m, None, feats, data.src_lbl, phase="warmup_s")
        metrics.add("warmup_s", epoch, **tot,
                    miou_s=evaluate(m, data.eval_img, data.eval_lbl, c))
    return round_f32(m)


# ---------------------------------------------------------------- translation


@dataclass
class PerceptualModels:
    """Segmenters extracting features for each side of the two image pairs."""
    raw_s: object  # features of S
    trans_s: object  # features of S' = G_ST(S)
    raw_t: object  # features of T
    trans_t: object  # features of T' = G_TS(T)


def perceptual_models(mode, m_s, m_t):
    if mode == "dual":
        return PerceptualModels(raw_s=m_s, trans_s=m_t, raw_t=m_t, trans_t=m_s)
    if mode == "single":
        return PerceptualModels(raw_s=m_t, trans_s=m_t, raw_t=m_t, trans_t=m_t)
    raise ValueError(f"unknown perceptual mode {mode!r}")


def dpit_generator_loss(g_st, g_ts, d_s, d_t, src, tgt, percep=None, f_src=None, f_tgt=None,
                        lambda_recon=10.0, lambda_dualper=0.1):
    """Full translation objective for one batch and its translator gradients.

    ``f_src`` / ``f_tgt`` are the fixed perceptual features of the raw images.
    Returns ``(LossValue, grads for g_st, grads for g_ts)``.
    """
    sp = M.translator_forward(g_st, src)
    tp = M.translator_forward(g_ts, tgt)
    s_cyc = M.translator_forward(g_ts, sp)
    t_cyc = M.translator_forward(g_st, tp)
    d_fake_t = M.image_disc_forward(d_t, sp)
    d_fake_s = M.image_disc_forward(d_s, tp)
    gan_s = losses.gan_loss_ls(d_fake_s, d_fake_s, "generator")
    gan_t = losses.gan_loss_ls(d_fake_t, d_fake_t, "generator")
    recon_s = losses.recon_loss(src, s_cyc)
    recon_t = losses.recon_loss(tgt, t_cyc)
    use_per = percep is not None and lambda_dualper > 0
    if use_per:
        f_sp = M.segmenter_forward(percep.trans_s, sp)
        f_tp = M.segmenter_forward(percep.trans_t, tp)
        dual = losses.dual_perceptual_loss(f_sp, f_src, f_tgt, f_tp)
    else:
        dual = losses.LossValue(0.0, {})
    total = losses.dpit_total(gan_s, gan_t, recon_s, recon_t, dual, lambda_recon, lambda_dualper)
    gr = total.grads

    _, g_sp = M.image_disc_backward(d_t, sp, gr["gan_t.d_fake"], need_input=True)
    _, g_tp = M.image_disc_backward(d_s, tp, gr["gan_s.d_fake"], need_input=True)
    g_ts_cyc, g_sp_cyc = M.translator_backward(g_ts, sp, gr["recon_s.x_cycle"])
    g_st_cyc, g_tp_cyc = M.translator_backward(g_st, tp, gr["recon_t.x_cycle"])
    g_sp = g_sp + g_sp_cyc
    g_tp = g_tp + g_tp_cyc
    if use_per:
        _, g = M.segmenter_backward(percep.trans_s, sp, gr["dual_per.f_T_of_Sp"], need_input=True)
        g_sp = g_sp + g
        _, g = M.segmenter_backward(percep.trans_t, tp, gr["dual_per.f_S_of_Tp"], need_input=True)
        g_tp = g_tp + g
    g_st_dir, _ = M.translator_backward(g_st, src, g_sp)
    g_ts_dir, _ = M.translator_backward(g_ts, tgt, g_tp)
    grads_st = M.TranslatorParams(g_st_dir.matrix + g_st_cyc.matrix, g_st_dir.bias + g_st_cyc.bias)
    grads_ts = M.TranslatorParams(g_ts_dir.matrix + g_ts_cyc.matrix, g_ts_dir.bias + g_ts_cyc.bias)
    return total, grads_st, grads_ts


def image_disc_step(disc, real, fake, lr):
    d_real = M.image_disc_forward(disc, real)
    d_fake = M.image_disc_forward(disc, fake)
    loss = losses.gan_loss_ls(d_real, d_fake, "discriminator")
    gr = M.image_disc_backward(disc, real, loss.grads["d_real"])
    gf = M.image_disc_backward(disc, fake, loss.grads["d_fake"])
    g = M.ImageDiscParams(gr.weight + gf.weight, gr.bias + gf.bias)
    return M.sgd_step(disc, g, lr), loss.value


@dataclass
class Translators:
    g_st: object
    g_ts: object
    d_s: object = None
    d_t: object = None


def train_translators(cfg, data, m_s=None, m_t=None, lambda_dualper=None, epochs=None,
                      phase="dpit", metrics=None):
    """Adversarial + cycle (+ perceptual) translator training.

    Segmenters are only read, never updated. With ``lambda_dualper == 0`` no
    segmenter is needed.
    """
    hp = cfg.hp
    metrics = metrics if metrics is not None else MetricsLog()
    lambda_dualper = hp.lambda_dualper if lambda_dualper is None else lambda_dualper
    epochs = cfg.epochs_dpit if epochs is None else epochs
    rng = _rng(cfg, 3 if phase == "dpit" else 2)
    tr = Translators(g_st=M.init_translator(rng), g_ts=M.init_translator(rng),
                     d_s=M.init_image_disc(rng), d_t=M.init_image_disc(rng))
    percep = None
    f_src_all = f_tgt_all = None
    if lambda_dualper > 0:
        if m_s is None or m_t is None:
            raise ValueError("perceptual loss needs both segmenters")
        percep = perceptual_models(cfg.perceptual, m_s, m_t)
        f_src_all = M.segmenter_forward(percep.raw_s, data.src)
        f_tgt_all = M.segmenter_forward(percep.raw_t, data.tgt)

    for epoch in range(epochs):
        tot = dict(loss_total=0.0, loss_gan=0.0, loss_recon=0.0, loss_dualper=0.0, loss_disc=0.0)
        batches = _paired_batches(rng, len(data.src), len(data.tgt), cfg.batch_size)
        for i_s, i_t in batches:
            src, tgt = data.src[i_s], data.tgt[i_t]
            sp = M.translator_forward(tr.g_st, src)
            tp = M.translator_forward(tr.g_ts, tgt)
            for _ in range(cfg.disc_steps):
                tr.d_t, lt = image_disc_step(tr.d_t, tgt, sp, hp.lr_disc)
                tr.d_s, ls = image_disc_step(tr.d_s, src, tp, hp.lr_disc)
            lv, g_st, g_ts = dpit_generator_loss(
                tr.g_st, tr.g_ts, tr.d_s, tr.d_t, src, tgt, percep,
                None if f_src_all is None else f_src_all[i_s],
                None if f_tgt_all is None else f_tgt_all[i_t],
                hp.lambda_recon, lambda_dualper)
            _check_finite(lv.value, phase)
            tr.g_st = M.sgd_step(tr.g_st, g_st, hp.lr_trans)
            tr.g_ts = M.sgd_step(tr.g_ts, g_ts, hp.lr_trans)
            k = len(batches)
            tot["loss_total"] += lv.value / k
            tot["loss_gan"] += (lv.parts["gan_s"] + lv.parts["gan_t"]) / k
            tot["loss_recon"] += (lv.parts["recon_s"] + lv.parts["recon_t"]) / k
            tot["loss_dualper"] += lv.parts["dual_per"] / k
            tot["loss_disc"] += (lt + ls) / k
        for p in (tr.g_st, tr.g_ts, tr.d_s, tr.d_t):
            _check_params(p, phase)
        metrics.add(phase, epoch, **tot)
    return Translators(*(round_f32(p) for p in (tr.g_st, tr.g_ts, tr.d_s, tr.d_t)))


def train_naive_translators(cfg, data, metrics=None):
    """Translator pair without perceptual supervision, for the target warm-up."""
    return train_translators(cfg, data, lambda_dualper=0.0, epochs=cfg.epochs_naive,
                             phase="naive", metrics=metrics)


def train_dpit(cfg, data, m_s, m_t, metrics=None):
    return train_translators(cfg, data, m_s, m_t, phase="dpit", metrics=metrics)


def cycle_recon_error(tr, data):
    s_cyc = M.translator_forward(tr.g_ts, M.translator_forward(tr.g_st, data.src))
    t_cyc = M.translator_forward(tr.g_st, M.translator_forward(tr.g_ts, data.tgt))
    return losses.recon_loss(data.src, s_cyc).value + losses.recon_loss(data.tgt, t_cyc).value


# ---------------------------------------------------------------- target warm-up


def _warmup_labels(cfg, m_t, feats_sp, feats_t, y_s):
    p_sp = predict_probs(m_t, None, feats_sp)
    if cfg.warmup_labels == "corrected":
        y_sp = label_ops.correct_labels(y_s, p_sp, cfg.hp.delta)
    elif cfg.warmup_labels == "gt":
        y_sp = y_s.copy()
    else:
        y_sp = np.where(y_s == UNLABELED, UNLABELED, argmax_labels(p_sp)).astype(np.uint8)
    y_t = label_ops.mpt_select(predict_probs(m_t, None, feats_t), cfg.hp.mpt_threshold)
    labeled = y_s != UNLABELED
    replaced = float(np.count_nonzero((y_sp != y_s) & labeled) / max(labeled.sum(), 1))
    return y_sp, y_t, replaced


def warmup_target(cfg, data, m_s, naive, metrics=None):
    """Target segmenter warm-up from a clone of ``m_s`` on translated source
    images with corrected labels and pseudo-labeled target images."""
    metrics = metrics if metrics is not None else MetricsLog()
    rng = _rng(cfg, 4)
    c = data.num_classes
    m_t = M.clone_params(m_s)
    disc = M.init_feat_disc(c, rng)
    feats_sp = M.extract_features(M.translator_forward(naive.g_st, data.src))
    feats_t = M.extract_features(data.tgt)
    y_sp = y_t = None
    for epoch in range(cfg.epochs_warmup_t):
        if y_sp is None or cfg.refresh == "per-epoch":
            y_sp, y_t, replaced = _warmup_labels(cfg, m_t, feats_sp, feats_t, data.src_lbl)
        m_t, disc, tot = _seg_epoch(cfg, rng, m_t, disc, feats_sp, y_sp, feats_t, y_t,
                                    phase="warmup_t")
        metrics.add("warmup_t", epoch, **tot,
                    miou_t=evaluate(m_t, data.eval_img, data.eval_lbl, c),
                    pseudo_count=int(np.count_nonzero(y_t != UNLABELED)),
                    replaced_frac=replaced)
    return round_f32(m_t)


# ---------------------------------------------------------------- DPAS


def dual_path_probs(m_s, m_t, g_ts, tgt):
    """``(P_T(T), P_S(T'))`` for target images ``tgt``."""
    return predict_probs(m_t, tgt), predict_probs(m_s, M.translator_forward(g_ts, tgt))


@dataclass
class DpasResult:
    m_s: object
    m_t: object
    pseudo_t: np.ndarray
    pseudo_s: np.ndarray
    hash_start: str
    hash_end: str
    eval_pseudo: np.ndarray = None
    info: dict = field(default_factory=dict)


def dpas_iteration(cfg, data, m_s, m_t, tr, n, metrics=None):
    """Generate pseudo labels once, then train both segmenters separately."""
    hp = cfg.hp
    metrics = metrics if metrics is not None else MetricsLog()
    c = data.num_classes
    rng_t = _rng(cfg, 100 + 2 * n)
    rng_s = _rng(cfg, 101 + 2 * n)
    sp = M.translator_forward(tr.g_st, data.src)
    tp = M.translator_forward(tr.g_ts, data.tgt)
    feats = {"s": M.extract_features(data.src), "sp": M.extract_features(sp),
             "t": M.extract_features(data.tgt), "tp": M.extract_features(tp)}

    p_t = predict_probs(m_t, None, feats["t"])
    p_s = predict_probs(m_s, None, feats["tp"])
    y_t, y_s = label_ops.generate_pseudo_labels(cfg.strategy, p_t, p_s, hp.alpha,
                                                hp.mpt_threshold)
    # same labeling applied to the held-out split, for quality analysis only
    e_t, e_s = dual_path_probs(m_s, m_t, tr.g_ts, data.eval_img)
    eval_pseudo = label_ops.generate_pseudo_labels(cfg.strategy, e_t, e_s, hp.alpha,
                                                   hp.mpt_threshold)[0]
    y_t.setflags(write=False)
    y_s.setflags(write=False)
    hash_start = label_hash(y_t, y_s)

    disc_t = M.init_feat_disc(c, rng_t)
    disc_s = M.init_feat_disc(c, rng_s)
    phase = f"dpas_{n}"
    for epoch in range(cfg.epochs_dpas):
        m_t, disc_t, tot_t = _seg_epoch(cfg, rng_t, m_t, disc_t, feats["sp"], data.src_lbl,
                                        feats["t"], y_t, phase=phase)
        m_s, disc_s, tot_s = _seg_epoch(cfg, rng_s, m_s, disc_s, feats["s"], data.src_lbl,
                                        feats["tp"], y_s, phase=phase)
        tot = {k: tot_t[k] + tot_s[k] for k in tot_t}
        metrics.add(phase, epoch, **tot,
                    miou_s=evaluate(m_s, data.eval_img, data.eval_lbl, c),
                    miou_t=evaluate(m_t, data.eval_img, data.eval_lbl, c),
                    pseudo_count=int(np.count_nonzero(y_t != UNLABELED)))
    hash_end = label_hash(y_t, y_s)
    if hash_end != hash_start:
        raise RuntimeError("pseudo labels changed within a DPAS iteration")

    return DpasResult(round_f32(m_s), round_f32(m_t), np.asarray(y_t), np.asarray(y_s),
                      hash_start, hash_end, eval_pseudo=eval_pseudo)


# ---------------------------------------------------------------- orchestration


@dataclass
class TrainState:
    m_s: object = None
    m_t: object = None
    naive: Translators = None
    translators: Translators = None
    n_done: int = 0
    baseline: dict = field(default_factory=dict)  # phase -> metric values


def _write_phase(out_dir, name, models, info, labels=None):
    d = Path(out_dir) / f"phase_{name}"
    d.mkdir(parents=True, exist_ok=True)
    for tag, params in models.items():
        save_params(d, tag, params)
    for prefix, arr in (labels or {}).items():
        for i, lbl in enumerate(arr):
            save_tensor(d / f"{prefix}_{i:05d}.dplt", lbl, Kind.LABEL)
    lines = [f"{k}={v!r}" if isinstance(v, float) else f"{k}={v}" for k, v in info.items()]
    (d / "manifest.txt").write_text("\n".join(lines) + "\n")


def _read_info(path):
    info = {}
    for line in Path(path).read_text().splitlines():
        k, _, v = line.partition("=")
        info[k] = v
    return info


def _hp_info(cfg):
    hp = cfg.hp
    return dict(seed=hp.seed, delta=hp.delta, mpt_threshold=hp.mpt_threshold, alpha=hp.alpha,
                lambda_adv=hp.lambda_adv, lambda_recon=hp.lambda_recon,
                lambda_dualper=hp.lambda_dualper, n_iters=hp.n_iters, strategy=cfg.strategy,
                warmup_labels=cfg.warmup_labels, perceptual=cfg.perceptual, refresh=cfg.refresh)


def load_state(resume_dir, upto="dpas"):
    """Rebuild the training state from the phases under ``resume_dir`` that
    come before ``upto``; DPAS iterations are resumed, not repeated."""
    root = Path(resume_dir)
    st = TrainState()
    if upto == "warmup":
        return st
    if (root / "phase_warmup_s").exists():
        st.m_s = load_params(root / "phase_warmup_s", "m_s")
        info = _read_info(root / "phase_warmup_s" / "manifest.txt")
        st.baseline["m_s0_target_miou"] = float(info["miou_target"])
    if (root / "phase_naive").exists():
        d = root / "phase_naive"
        st.naive = Translators(load_params(d, "g_st"), load_params(d, "g_ts"))
    if (root / "phase_warmup_t").exists():
        st.m_t = load_params(root / "phase_warmup_t", "m_t")
        info = _read_info(root / "phase_warmup_t" / "manifest.txt")
        st.baseline["m_t0_target_miou"] = float(info["miou_target"])
    if upto == "dpit":
        return st
    if (root / "phase_dpit").exists():
        d = root / "phase_dpit"
        st.translators = Translators(*(load_params(d, t) for t in ("g_st", "g_ts", "d_s", "d_t")))
    n = 1
    while (root / f"phase_dpas_{n}").exists():
        d = root / f"phase_dpas_{n}"
        st.m_s, st.m_t = load_params(d, "m_s"), load_params(d, "m_t")
        st.n_done = n
        n += 1
    return st


def run_warmup(cfg, data, st, metrics, out_dir=None):
    c = data.num_classes
    st.m_s = warmup_source(cfg, data, metrics)
    ms_t = evaluate(st.m_s, data.eval_img, data.eval_lbl, c)
    st.baseline["m_s0_target_miou"] = ms_t
    if out_dir:
        _write_phase(out_dir, "warmup_s", {"m_s": st.m_s},
                     dict(phase="warmup_s", miou_target=ms_t, **_hp_info(cfg)))
    st.naive = train_naive_translators(cfg, data, metrics)
    if out_dir:
        _write_phase(out_dir, "naive", {"g_st": st.naive.g_st, "g_ts": st.naive.g_ts},
                     dict(phase="naive", recon=cycle_recon_error(st.naive, data), **_hp_info(cfg)))
    st.m_t = warmup_target(cfg, data, st.m_s, st.naive, metrics)
    mt_t = evaluate(st.m_t, data.eval_img, data.eval_lbl, c)
    st.baseline["m_t0_target_miou"] = mt_t
    if out_dir:
        _write_phase(out_dir, "warmup_t", {"m_t": st.m_t},
                     dict(phase="warmup_t", miou_target=mt_t, **_hp_info(cfg)))
    return st


def run_dpit(cfg, data, st, metrics, out_dir=None):
    if st.m_s is None or st.m_t is None:
        raise DataError("DPIT needs warmed-up segmenters (run the warm-up first)")
    st.translators = train_dpit(cfg, data, st.m_s, st.m_t, metrics)
    if out_dir:
        tr = st.translators
        _write_phase(out_dir, "dpit",
                     {"g_st": tr.g_st, "g_ts": tr.g_ts, "d_s": tr.d_s, "d_t": tr.d_t},
                     dict(phase="dpit", recon=cycle_recon_error(tr, data), **_hp_info(cfg)))
    return st


def run_dpas(cfg, data, st, metrics, out_dir=None):
    if st.translators is None or st.m_s is None or st.m_t is None:
        raise DataError("DPAS needs segmenters and DPIT translators")
    c = data.num_classes
    for n in range(st.n_done + 1, cfg.hp.n_iters + 1):
        res = dpas_iteration(cfg, data, st.m_s, st.m_t, st.translators, n, metrics)
        st.m_s, st.m_t, st.n_done = res.m_s, res.m_t, n
        if out_dir:
            labels = {"pseudo_t": res.pseudo_t, "eval_pseudo": res.eval_pseudo}
            if cfg.strategy == "spplg":
                labels["pseudo_s"] = res.pseudo_s
            q = pseudo_quality(res.eval_pseudo, data.eval_lbl, c)
            info = dict(phase=f"dpas_{n}", n=n,
                        miou_t=evaluate(st.m_t, data.eval_img, data.eval_lbl, c),
                        miou_s=evaluate(st.m_s, data.eval_img, data.eval_lbl, c),
                        pseudo_count=int(np.count_nonzero(res.pseudo_t != UNLABELED)),
                        eval_pseudo_accuracy=float(q.overall_accuracy),
                        eval_pseudo_ratio=float(q.pixel_ratio),
                        label_hash_start=res.hash_start, label_hash_end=res.hash_end,
                        **_hp_info(cfg))
            _write_phase(out_dir, f"dpas_{n}", {"m_s": st.m_s, "m_t": st.m_t}, info, labels)
    return st


PHASES = ("warmup", "dpit", "dpas")


def run_dpl(cfg, data=None, out_dir=None, phases=PHASES, resume_dir=None):
    """Algorithm 1 end to end (or the requested subset of phases).

    Writes checkpoints, ``metrics.csv`` and ``config.txt`` under ``out_dir``
    when given. Returns ``(TrainState, MetricsLog)``.
    """
    cfg.validate()
    if data is None:
        data = load_dataset(cfg.data_dir)
    first = next(p for p in PHASES if p in phases)
    st = load_state(resume_dir, first) if resume_dir else TrainState()
    metrics = MetricsLog()
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "config.txt").write_text(dump_config(cfg))
    if "warmup" in phases:
        run_warmup(cfg, data, st, metrics, out_dir)
    if "dpit" in phases:
        run_dpit(cfg, data, st, metrics, out_dir)
    if "dpas" in phases:
        run_dpas(cfg, data, st, metrics, out_dir)
    if out_dir:
        metrics.write(Path(out_dir) / "metrics.csv")
    return st, metrics

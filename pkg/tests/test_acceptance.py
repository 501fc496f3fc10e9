"""Acceptance criteria, one test each, every test printing a PASS/FAIL line.

The end-to-end criteria share one reference run of the default benchmark
(seed 0); a second identical run checks determinism. Margins marked as
reference-run values come from ``scripts/reference_run.py``.

Run alone with ``pytest tests/test_acceptance.py -v -s``.
"""
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as hst

from dpl import label_ops as L
from dpl import losses as Ls
from dpl import models as M
from dpl import trainer as T
from dpl.config import TrainConfig
from dpl.core_types import UNLABELED, argmax_labels
from dpl.data_synth import DatasetManifest, target_scene
from dpl.metrics import miou

import test_losses
import test_models
from helpers import prob_map_pairs, random_probs
from test_metrics import PUBLISHED_IOUS

# reference run, seed 0: M_T^(1) 0.931 vs M_S^(0) 0.292 (seeds 1, 2: gaps 0.57, 0.69)
ADAPTATION_MARGIN = 0.30
RESULTS = []


def report(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name} ({detail})"
    RESULTS.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="module")
def reference(tmp_path_factory):
    data = T.build_dataset(DatasetManifest())
    cfg = TrainConfig()
    out = tmp_path_factory.mktemp("reference")
    t0 = time.perf_counter()
    st, _ = T.run_dpl(cfg, data, out_dir=out / "a")
    seconds = time.perf_counter() - t0
    return data, cfg, st, out, seconds


def test_01_published_miou():
    v = miou(PUBLISHED_IOUS)
    report(1, "published per-class IoUs average to 52.8", abs(v - 52.8) <= 0.05, f"{v:.4f}")


GRADIENT_CHECKS = [
    (test_losses.test_grad_cross_entropy, {"normalize": "pixels"}),
    (test_losses.test_grad_cross_entropy, {"normalize": "labeled"}),
    (test_losses.test_grad_perceptual, {}),
    (test_losses.test_grad_dual_perceptual, {}),
    (test_losses.test_grad_gan, {"role": "discriminator"}),
    (test_losses.test_grad_gan, {"role": "generator"}),
    (test_losses.test_grad_recon, {}),
    (test_losses.test_grad_adv, {"role": "discriminator"}),
    (test_losses.test_grad_adv, {"role": "generator"}),
    (test_losses.test_grad_dpit_total_through_components, {}),
    (test_models.test_grad_features, {}),
    (test_models.test_grad_segmenter, {}),
    (test_models.test_grad_softmax_backward, {}),
    (test_models.test_grad_translator, {}),
    (test_models.test_grad_image_disc, {}),
    (test_models.test_grad_feat_disc, {}),
    (test_models.test_grad_segmenter_objective, {}),
    (test_models.test_grad_dpit_generator, {}),
]


def test_02_gradient_suite():
    t0 = time.perf_counter()
    failures = []
    for check, kw in GRADIENT_CHECKS:
        for seed in range(10):
            try:
                check(seed=seed, **kw)
            except AssertionError as exc:
                failures.append(f"{check.__name__}[{seed}]: {exc}")
    seconds = time.perf_counter() - t0
    n = len(GRADIENT_CHECKS) * 10
    report(2, "finite-difference gradient suite", not failures and seconds < 30,
           f"{n - len(failures)}/{n} checks under 1e-4 in {seconds:.1f}s"
           + (f"; first failure {failures[0]}" if failures else ""))


def test_03_boundary_laws():
    rng = np.random.default_rng(0)
    bad = []
    for _ in range(100):
        p, q = random_probs(rng, (6, 6, 4)), random_probs(rng, (6, 6, 4))
        y = rng.integers(0, 4, (6, 6)).astype(np.uint8)
        if np.any(L.mpt_select(p, 1.0) != UNLABELED):
            bad.append("mpt lambda=1")
        if np.any(L.mpt_select(p, 0.0) == UNLABELED):
            bad.append("mpt lambda=0")
        if not np.array_equal(L.correct_labels(y, p, 1.0 + rng.random()), y):
            bad.append("correction delta>=1")
        if not np.array_equal(L.fuse_weighted(p, q, 1.0), p):
            bad.append("alpha=1")
        if not np.array_equal(L.fuse_weighted(p, q, 0.0), q):
            bad.append("alpha=0")
        if not np.array_equal(L.fuse_inference(p, p), p):
            bad.append("fuse_inference fixed point")
    report(3, "boundary laws hold exactly", not bad,
           "100 random maps" if not bad else ", ".join(sorted(set(bad))))


def test_04_monotonicity():
    rng = np.random.default_rng(1)
    lams = np.linspace(0, 1, 21)
    deltas = np.linspace(0, 1.2, 25)
    bad = 0
    for _ in range(100):
        p = random_probs(rng, (8, 8, 4), rng.uniform(0.5, 6))
        y = rng.integers(0, 4, (8, 8)).astype(np.uint8)
        sel = [np.count_nonzero(L.mpt_select(p, lam) != UNLABELED) for lam in lams]
        rep = [np.count_nonzero(L.correction_mask(y, p, d)) for d in deltas]
        bad += np.any(np.diff(sel) > 0) + np.any(np.diff(rep) > 0)
    report(4, "selection and correction counts non-increasing", bad == 0,
           f"{bad} violations over 100 maps")


def test_05_end_to_end_adaptation(reference):
    data, _, st, _, seconds = reference
    m_s0 = st.baseline["m_s0_target_miou"]
    m_t1 = T.evaluate(st.m_t, data.eval_img, data.eval_lbl, data.num_classes)
    report(5, "M_T^(1) beats source-only M_S^(0) on target",
           m_t1 - m_s0 > ADAPTATION_MARGIN and seconds < 300,
           f"{m_t1:.4f} vs {m_s0:.4f}, margin {ADAPTATION_MARGIN}, run {seconds:.0f}s")


def test_06_warmup_ordering(reference):
    st = reference[2]
    m_s0, m_t0 = st.baseline["m_s0_target_miou"], st.baseline["m_t0_target_miou"]
    report(6, "M_T^(0) >= M_S^(0) on target", m_t0 >= m_s0, f"{m_t0:.4f} vs {m_s0:.4f}")


@settings(max_examples=300)
@given(prob_map_pairs(h=hst.just(8), w=hst.just(8)))
def _argmax_invariance(pair):
    p_t, p_s = pair
    a_t = argmax_labels(p_t)
    agree = a_t == argmax_labels(p_s)
    for alpha in (0.0, 0.13, 0.5, 0.87, 1.0):
        for lam in (0.0, 0.5, 0.9):
            for y in (L.dpplg_weighted(p_t, p_s, alpha, lam), L.dpplg_max(p_t, p_s, lam),
                      L.dpplg_joint(p_t, p_s, lam)):
                emitted = agree & (y != UNLABELED)
                assert np.array_equal(y[emitted], a_t[emitted])


def test_07_strategy_argmax_invariance():
    try:
        _argmax_invariance()
        ok, detail = True, "300 random 8x8 pairs, 15 (alpha, lambda) settings"
    except AssertionError as exc:
        ok, detail = False, str(exc).splitlines()[0]
    report(7, "fusion strategies keep agreed argmax", ok, detail)


def test_08_dpit_effect(reference):
    data, _, st, _, _ = reference
    spec = data.manifest.spec
    ref = np.stack([target_scene(spec, i, "eval")[0] for i in range(len(data.eval_img))])
    moved = M.translator_forward(st.translators.g_ts, data.eval_img)
    better = np.abs(moved - ref).mean(axis=(1, 2, 3)) < np.abs(data.eval_img - ref).mean(
        axis=(1, 2, 3))
    frac = float(better.mean())
    report(8, "DPIT target->source translation closer to clean source style", frac >= 0.9,
           f"{better.sum()}/{better.size} eval images")


def test_09_determinism(reference):
    data, cfg, _, out, _ = reference
    T.run_dpl(cfg, data, out_dir=out / "b")
    a = {p.relative_to(out / "a"): p.read_bytes() for p in (out / "a").rglob("*") if p.is_file()}
    b = {p.relative_to(out / "b"): p.read_bytes() for p in (out / "b").rglob("*") if p.is_file()}
    kinds = {"checkpoints": [k for k in a if k.name.startswith("model_")],
             "pseudo labels": [k for k in a if "pseudo" in k.name],
             "metric log": [k for k in a if k.name == "metrics.csv"]}
    differ = [str(k) for k in set(a) | set(b) if a.get(k) != b.get(k)]
    ok = not differ and all(kinds.values())
    report(9, "two identical runs are bit-identical", ok,
           ", ".join(f"{len(v)} {k}" for k, v in kinds.items())
           + (f"; differing: {differ[:3]}" if differ else ""))


def test_10_analytic_loss_values():
    ce = Ls.seg_cross_entropy(np.zeros((4, 4, 4)), np.zeros((4, 4), np.uint8)).value
    f = np.random.default_rng(2).standard_normal((3, 3, 4))
    dual = Ls.dual_perceptual_loss(f, f, f, f).value
    unit = Ls.LossValue(1.0)
    total = Ls.dpit_total(unit, unit, unit, unit, unit, 10.0, 0.1).value
    ok = abs(ce - math.log(4)) < 1e-6 and dual == 0.0 and abs(total - 22.1) < 1e-6
    report(10, "analytic loss values", ok, f"ce {ce:.8f}, dual {dual}, dpit {total:.8f}")


# -------------------------------------------------------------- spec examples, reference run


def test_dual_inference_not_worse(reference):
    from dpl.cli import infer_probs
    from dpl.metrics import accumulate, confusion_matrix, per_class_iou
    data, _, st, _, _ = reference

    def score(p):
        cm = accumulate(confusion_matrix(4), argmax_labels(p), data.eval_lbl)
        return miou(per_class_iou(cm))

    single = score(infer_probs(st.m_t, data.eval_img))
    dual = score(infer_probs(st.m_t, data.eval_img, st.m_s, st.translators.g_ts))
    print(f"inference: path-T {single:.4f}, dual {dual:.4f}")
    assert dual >= single - 0.005


def test_dpas_improves_target_model(reference):
    # trend check from the reference run; see README for the seed-0 outcome
    data, _, st, _, _ = reference
    m_t0 = st.baseline["m_t0_target_miou"]
    m_t1 = T.evaluate(st.m_t, data.eval_img, data.eval_lbl, data.num_classes)
    print(f"M_T^(0) {m_t0:.4f} -> M_T^(1) {m_t1:.4f}")
    assert m_t1 > m_t0


def test_dpit_lowers_cycle_error(reference):
    data, cfg, st, _, _ = reference
    rng = T._rng(cfg, 3)
    init = T.Translators(M.init_translator(rng), M.init_translator(rng))
    before, after = T.cycle_recon_error(init, data), T.cycle_recon_error(st.translators, data)
    print(f"cycle error at init {before:.4f}, after DPIT {after:.4f}")
    assert after < before

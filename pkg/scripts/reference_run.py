"""Full pipeline on the default benchmark, printing every number the
acceptance margins are fixed from.

    python3 scripts/reference_run.py [--seed N] [--out runs/reference] [key=value ...]
"""
import argparse
import logging
import time

import numpy as np

from dpl import models as M
from dpl import trainer as T
from dpl.cli import infer_probs
from dpl.config import parse_config
from dpl.core_types import argmax_labels
from dpl.data_synth import DatasetManifest, target_scene
from dpl.metrics import accumulate, confusion_matrix, miou, per_class_iou


def translation_mae(g_ts, data):
    """Per-image MAE of translated and untranslated eval images against the
    noise-free source-style scene."""
    spec = data.manifest.spec
    ref = np.stack([target_scene(spec, i, "eval")[0] for i in range(len(data.eval_img))])
    moved = M.translator_forward(g_ts, data.eval_img)
    return (np.abs(moved - ref).mean(axis=(1, 2, 3)),
            np.abs(data.eval_img - ref).mean(axis=(1, 2, 3)))


def labels_miou(pred, gt, c):
    return miou(per_class_iou(accumulate(confusion_matrix(c), pred, gt)))


def reference(cfg, out=None):
    data = T.build_dataset(DatasetManifest())
    c = data.num_classes
    t0 = time.perf_counter()
    st, _ = T.run_dpl(cfg, data, out_dir=out)
    elapsed = time.perf_counter() - t0
    moved, still = translation_mae(st.translators.g_ts, data)
    tr = st.translators
    single = argmax_labels(infer_probs(st.m_t, data.eval_img))
    dual = argmax_labels(infer_probs(st.m_t, data.eval_img, st.m_s, tr.g_ts))
    rng = T._rng(cfg, 3)  # the stream DPIT initialises from
    dpit_init = T.Translators(M.init_translator(rng), M.init_translator(rng))
    return {
        "m_s0_target": st.baseline["m_s0_target_miou"],
        "m_t0_target": st.baseline["m_t0_target_miou"],
        "m_tN_target": T.evaluate(st.m_t, data.eval_img, data.eval_lbl, c),
        "m_sN_translated": T.evaluate(st.m_s, M.translator_forward(tr.g_ts, data.eval_img),
                                      data.eval_lbl, c),
        "dpl_single": labels_miou(single, data.eval_lbl, c),
        "dpl_dual": labels_miou(dual, data.eval_lbl, c),
        "dpit_better_frac": float(np.mean(moved < still)),
        "dpit_mae": float(moved.mean()),
        "untranslated_mae": float(still.mean()),
        "cycle_init": T.cycle_recon_error(dpit_init, data),
        "cycle_dpit": T.cycle_recon_error(tr, data),
        "seconds": elapsed,
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("overrides", nargs="*", help="config key=value pairs")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    cfg = parse_config("\n".join(args.overrides)).with_hp(seed=args.seed)
    for key, value in reference(cfg, args.out).items():
        print(f"{key:18s} {value:.4f}")


if __name__ == "__main__":
    main()

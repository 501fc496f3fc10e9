"""Command-line entry point: ``python3 -m dpl <command> ...``.

Exit codes: 0 success, 2 usage, 3 config error, 4 I/O or data error,
5 numeric divergence.
"""
import argparse
import logging
import os
import re
import sys
from pathlib import Path

import numpy as np

from . import label_ops
from . import models as M
from .checkpoint import load_params
from .config import ConfigError, load_config
from .core_types import (UNLABELED, Kind, TensorFormatError, argmax_labels, load_tensor,
                         save_tensor, softmax)
from .data_synth import CLASS_NAMES, DatasetManifest, parse_manifest, write_dataset
from .metrics import (accumulate, confusion_matrix, miou, pseudo_quality, write_iou_report,
                      write_quality_report)
from .trainer import DataError, DivergenceError, evaluate, load_dataset, run_dpl

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED = 0, 2, 3, 4, 5

log = logging.getLogger("dpl")

# RGB per class for PPM export; UNLABELED renders black
LABEL_COLOURS = np.array([
    [60, 140, 60],
    [220, 60, 50],
    [60, 80, 200],
    [230, 200, 40],
], dtype=np.uint8)


# ---------------------------------------------------------------- helpers


def _index(path):
    m = re.search(r"(\d+)\.dplt$", Path(path).name)
    return int(m.group(1)) if m else None


def _indexed(directory, prefix):
    """``{index: path}`` for ``<prefix>_<n>.dplt`` files."""
    pat = re.compile(re.escape(prefix) + r"_(\d+)\.dplt$")
    out = {}
    for p in sorted(Path(directory).glob(f"{prefix}_*.dplt")):
        m = pat.match(p.name)
        if m:
            out[int(m.group(1))] = p
    return out


def _paired_labels(pred_dir, pred_prefix, gt_dir, gt_prefix="lbl"):
    preds = _indexed(pred_dir, pred_prefix)
    gts = _indexed(gt_dir, gt_prefix)
    common = sorted(set(preds) & set(gts))
    if not common:
        raise DataError(f"no matching {pred_prefix}_* / {gt_prefix}_* files "
                        f"in {pred_dir} and {gt_dir}")
    for i in common:
        pred, k_p = load_tensor(preds[i])
        gt, k_g = load_tensor(gts[i])
        if k_p != Kind.LABEL or k_g != Kind.LABEL:
            raise DataError(f"expected LabelMaps for index {i}")
        yield i, pred, gt


def _latest_phase(root, tag):
    """Directory holding ``model_<tag>``: ``root`` itself or its newest phase."""
    root = Path(root)
    if (root / f"model_{tag}.manifest").exists():
        return root
    dpas = sorted(root.glob("phase_dpas_*"), key=lambda p: int(p.name.rsplit("_", 1)[1]))
    fixed = {"m_s": ["phase_warmup_s"], "m_t": ["phase_warmup_t"],
             "g_ts": ["phase_dpit", "phase_naive"], "g_st": ["phase_dpit", "phase_naive"]}
    for d in list(reversed(dpas)) + [root / name for name in fixed.get(tag, [])]:
        if (d / f"model_{tag}.manifest").exists():
            return d
    return None


def _load_model(root, tag):
    d = _latest_phase(root, tag)
    if d is None:
        raise DataError(f"no {tag} checkpoint under {root}")
    log.info("using %s from %s", tag, d)
    return load_params(d, tag)


def _read_config(args):
    cfg = load_config(args.config, seed=args.seed, env=args.env)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "data", None):
        cfg.data_dir = args.data
    return cfg


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    try:
        manifest = (parse_manifest(Path(args.config).read_text()) if args.config
                    else DatasetManifest())
        seed = args.seed
        if seed is None and args.env.get("DPL_SEED"):
            seed = int(args.env["DPL_SEED"])
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if seed is not None:
        manifest.spec.seed = seed
    root = write_dataset(manifest, args.out)
    spec = manifest.spec
    print(f"wrote {root}: {manifest.n_source} source, {manifest.n_target} target, "
          f"{manifest.n_eval} eval images of {spec.height}x{spec.width}, "
          f"{spec.num_classes} classes, seed {spec.seed}")


def _run_phases(args, phases):
    cfg = _read_config(args)
    st, _ = run_dpl(cfg, out_dir=cfg.out_dir, phases=phases, resume_dir=args.resume)
    for key, value in sorted(st.baseline.items()):
        print(f"{key} {value:.4f}")
    if "dpas" in phases and st.n_done:
        data = load_dataset(cfg.data_dir)
        m = evaluate(st.m_t, data.eval_img, data.eval_lbl, data.num_classes)
        print(f"m_t{st.n_done}_target_miou {m:.4f}")
    print(f"checkpoints in {cfg.out_dir}")


def cmd_run(args):
    _run_phases(args, ("warmup", "dpit", "dpas"))


def cmd_warmup(args):
    _run_phases(args, ("warmup",))


def cmd_dpit(args):
    _run_phases(args, ("dpit",))


def cmd_dpas(args):
    _run_phases(args, ("dpas",))


def infer_probs(m_t, imgs, m_s=None, g_ts=None):
    """Path-T probabilities, fused with path-S on translated images when given."""
    p = softmax(M.segmenter_forward(m_t, imgs))
    if m_s is not None:
        p_s = softmax(M.segmenter_forward(m_s, M.translator_forward(g_ts, imgs)))
        p = label_ops.fuse_inference(p, p_s)
    return p


def cmd_infer(args):
    m_t = _load_model(args.model_dir, "m_t")
    m_s = g_ts = None
    if args.dual:
        if _latest_phase(args.model_dir, "g_ts") is None:
            raise DataError(f"--dual needs a G_T->S checkpoint under {args.model_dir}")
        g_ts = _load_model(args.model_dir, "g_ts")
        m_s = _load_model(args.model_dir, "m_s")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(args.images).glob("*.dplt"))
    n = 0
    for path in paths:
        img, kind = load_tensor(path)
        if kind != Kind.IMAGE:
            continue
        p = infer_probs(m_t, img.astype(np.float64)[None], m_s, g_ts)[0]
        i = _index(path)
        stem = f"{i:05d}" if i is not None else path.stem
        save_tensor(out / f"lbl_{stem}.dplt", argmax_labels(p), Kind.LABEL)
        if args.probs:
            save_tensor(out / f"prob_{stem}.dplt", p, Kind.PROB)
        n += 1
    if n == 0:
        raise DataError(f"no images in {args.images}")
    print(f"wrote {n} label maps to {out} ({'dual' if args.dual else 'path-T'} mode)")


def cmd_eval(args):
    cm = None
    for _, pred, gt in _paired_labels(args.pred_dir, args.prefix, args.gt_dir):
        if cm is None:
            cm = confusion_matrix(args.num_classes)
        cm = accumulate(cm, pred, gt)
    ious = write_iou_report(args.out, cm, list(CLASS_NAMES[:args.num_classes]))
    print(f"miou {miou(ious):.4f} -> {args.out}")


def cmd_analyze(args):
    pseudo, gts = [], []
    for _, y, gt in _paired_labels(args.pseudo_dir, args.prefix, args.gt_dir):
        pseudo.append(y)
        gts.append(gt)
    report = pseudo_quality(np.stack(pseudo), np.stack(gts), args.num_classes)
    write_quality_report(args.out, report, list(CLASS_NAMES[:args.num_classes]))
    print(f"mean_accuracy {report.mean_accuracy:.4f} pixel_ratio {report.pixel_ratio:.4f}"
          f" -> {args.out}")


def render_rgb(data, kind):
    """uint8 (H, W, 3) rendering of an Image or a colour-coded LabelMap."""
    if kind == Kind.IMAGE:
        return np.round(np.clip(data, 0.0, 1.0) * 255).astype(np.uint8)
    if kind == Kind.LABEL:
        rgb = np.zeros(data.shape + (3,), dtype=np.uint8)
        known = data != UNLABELED
        rgb[known] = LABEL_COLOURS[data[known] % len(LABEL_COLOURS)]
        return rgb
    raise DataError(f"cannot render a {kind.name} tensor; expected IMAGE or LABEL")


def encode_ppm(rgb):
    h, w, _ = rgb.shape
    return f"P6\n{w} {h}\n255\n".encode("ascii") + np.ascontiguousarray(rgb).tobytes()


def cmd_export_ppm(args):
    data, kind = load_tensor(args.inp)
    Path(args.out).write_bytes(encode_ppm(render_rgb(data, kind)))
    print(f"wrote {args.out}")


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="dpl", description="Dual-path domain adaptation toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the synthetic benchmark")
    s.add_argument("--config", help="dataset key=value file (manifest format)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_synth)

    for name, func, helptext in (("run", cmd_run, "all phases"),
                                 ("warmup", cmd_warmup, "segmenter and translator warm-up"),
                                 ("dpit", cmd_dpit, "dual-path image translation"),
                                 ("dpas", cmd_dpas, "dual-path adaptive segmentation")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("--config")
        s.add_argument("--out", help="output directory (overrides out_dir)")
        s.add_argument("--data", help="dataset directory (overrides data_dir)")
        s.add_argument("--seed", type=int)
        s.add_argument("--resume", help="directory with earlier phase checkpoints")
        s.set_defaults(func=func)

    s = sub.add_parser("infer", help="segment target images")
    s.add_argument("--model-dir", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--dual", action="store_true", help="fuse with path-S on translated images")
    s.add_argument("--probs", action="store_true", help="also dump probability maps")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="per-class IoU report")
    s.add_argument("--pred-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--prefix", default="lbl", help="prediction file prefix")
    s.add_argument("--num-classes", type=int, default=len(CLASS_NAMES))
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("analyze", help="pseudo-label quality report")
    s.add_argument("--pseudo-dir", required=True)
    s.add_argument("--gt-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--prefix", default="eval_pseudo", help="pseudo-label file prefix")
    s.add_argument("--num-classes", type=int, default=len(CLASS_NAMES))
    s.set_defaults(func=cmd_analyze)

    s = sub.add_parser("export-ppm", help="render an image or label map as binary PPM")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_export_ppm)
    return p


def main(argv=None, env=None):
    args = build_parser().parse_args(argv)
    args.env = os.environ if env is None else env
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (OSError, TensorFormatError, DataError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

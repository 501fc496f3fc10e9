"""Sweep one config knob at a time around the defaults and tabulate the
headline numbers. Each row is a full pipeline run (~50 s on one core).

    python3 scripts/ablations.py [--seed N] [--only strategy,alpha]
"""
import argparse

from dpl.config import parse_config
from reference_run import reference

SWEEPS = {
    "strategy": ["strategy=weighted", "strategy=max", "strategy=joint", "strategy=spplg"],
    "alpha": ["alpha=0", "alpha=0.25", "alpha=0.5", "alpha=0.75", "alpha=1"],
    "delta": ["delta=0.1", "delta=0.3", "delta=0.6"],
    "perceptual": ["perceptual=dual", "perceptual=single", "lambda_dualper=0"],
    "warmup_labels": ["warmup_labels=corrected", "warmup_labels=pseudo", "warmup_labels=gt"],
}
COLUMNS = ("m_t0_target", "m_tN_target", "dpl_single", "dpl_dual", "cycle_dpit")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", help="comma-separated sweep names")
    args = ap.parse_args()
    names = args.only.split(",") if args.only else list(SWEEPS)
    print(f"{'setting':26s}" + "".join(f"{c:>13s}" for c in COLUMNS))
    for name in names:
        for override in SWEEPS[name]:
            cfg = parse_config(override).with_hp(seed=args.seed)
            row = reference(cfg)
            print(f"{override:26s}" + "".join(f"{row[c]:13.4f}" for c in COLUMNS), flush=True)


if __name__ == "__main__":
    main()

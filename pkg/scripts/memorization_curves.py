"""Per-epoch fit to clean and mislabeled training examples, CE vs RTME.

    python3 scripts/memorization_curves.py --config scripts/configs/mixture_sym30.ini --out runs/memorization.csv
"""

import argparse
import csv
import sys
from pathlib import Path
from dataclasses import replace

import numpy as np

from rtme.config import load_config
from rtme.experiments import run_many

DEFAULT_CONFIG = Path(__file__).parent / "configs" / "mixture_sym30.ini"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(DEFAULT_CONFIG))
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    base = load_config(args.config)
    columns = ("train_acc", "clean_fit_fraction", "noisy_fit_fraction", "test_acc")
    curves = {}
    for method in ("ce", "rtme"):
        recs = run_many([replace(base.with_seed(s), method=method) for s in args.seeds], args.workers)
        curves[method] = {c: np.mean([r.column(c) for r in recs], axis=0) for c in columns}

    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(("epoch", *[f"{m}_{c}" for m in curves for c in columns]))
    for t in range(base.train.epochs):
        w.writerow((t, *[repr(float(curves[m][c][t])) for m in curves for c in columns]))
    if args.out:
        fh.close()


if __name__ == "__main__":
    main()

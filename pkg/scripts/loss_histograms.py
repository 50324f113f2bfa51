"""Clean/mislabeled loss histograms at several epochs of one run.

    python3 scripts/loss_histograms.py --config scripts/configs/mixture_sym30.ini --epochs 0 10 50 99 --out-dir runs/hist
"""

import argparse
from dataclasses import replace
from pathlib import Path

from rtme.config import load_config
from rtme.errors import ConfigError
from rtme.experiments import loss_histogram, make_split, run

DEFAULT_CONFIG = Path(__file__).parent / "configs" / "mixture_sym30.ini"


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(DEFAULT_CONFIG))
    ap.add_argument("--epochs", type=int, nargs="+", default=[0, 10, 50])
    ap.add_argument("--out-dir", default="runs")
    args = ap.parse_args(argv)

    cfg = load_config(args.config)
    bad = [e for e in args.epochs if not 0 <= e < cfg.train.epochs]
    if bad:
        raise ConfigError(f"epochs out of range: {bad}")
    split = make_split(cfg)
    wanted = set(args.epochs)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def grab(t, model, losses, sigma):
        # one training run serves every requested epoch
        if t in wanted:
            hist = loss_histogram(losses, split.train.clean_mask, cfg.hist_bins, t)
            path = out / f"loss-hist-e{t}-{cfg.hash()}.csv"
            path.write_text(hist.to_csv())
            print(f"{path}  sigma={sigma:.4f}")

    last = max(wanted)
    run(replace(cfg, train=replace(cfg.train, epochs=last + 1)), split, on_epoch_start=grab)


if __name__ == "__main__":
    main()

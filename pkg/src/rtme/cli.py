"""Command-line front end.

    rtme train         --config run.ini [--out DIR] [--seed N]
    rtme sweep-r       --config run.ini ...
    rtme perturb-sigma --config run.ini ...
    rtme hist          --config run.ini --epoch E ...
    rtme lemma-check   [--config run.ini] ...
    rtme noise-stats   --config run.ini ...

Exit codes: 0 success, 1 lemma-check verdict FAIL, 2 config/input error,
3 numeric failure.  Errors are reported as one JSON object on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from dataclasses import replace
from pathlib import Path

from rtme.config import RunConfig, load_config
from rtme.errors import ConfigError, FormatError, InputError, NumericError
from rtme.experiments import histogram_at_epoch, lemma_report, noisy_pool, perturb_sigma_sweep, run, sweep_r
from rtme.noise import noise_stats, transition_csv
from rtme.trainer import summary_json

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _resolve(args, required=True) -> RunConfig:
    if args.config is None:
        if required:
            raise ConfigError("--config is required for this command")
        cfg = RunConfig()
    else:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
        cfg = replace(cfg, sweep=replace(cfg.sweep, seeds=(args.seed,)))
    return cfg


def _write(out: Path, name: str, tag: str, ext: str, text: str) -> Path:
    path = out / f"{name}-{tag}.{ext}"
    atomic_write(path, text)
    return path


def cmd_train(args) -> int:
    cfg = _resolve(args)
    tag = cfg.hash()
    _, record = run(cfg)
    out = Path(args.out)
    csv_path = _write(out, "metrics", tag, "csv", record.to_csv())
    _write(out, "summary", tag, "json", summary_json(record, {"config": cfg.to_dict(), "config_hash": tag, "method": cfg.method}))
    print(csv_path)
    return EXIT_OK


def cmd_sweep_r(args) -> int:
    cfg = _resolve(args)
    tag = cfg.hash()
    res = sweep_r(cfg)
    out = Path(args.out)
    _write(out, "sweep-r", tag, "csv", res.rows_csv())
    print(_write(out, "sweep-r-summary", tag, "csv", res.summary_csv()))
    return EXIT_OK


def cmd_perturb_sigma(args) -> int:
    cfg = _resolve(args)
    tag = cfg.hash()
    res = perturb_sigma_sweep(cfg)
    out = Path(args.out)
    _write(out, "perturb-sigma", tag, "csv", res.rows_csv())
    print(_write(out, "perturb-sigma-summary", tag, "csv", res.summary_csv()))
    return EXIT_OK


def cmd_hist(args) -> int:
    cfg = _resolve(args)
    tag = cfg.hash()
    hist = histogram_at_epoch(cfg, args.epoch)
    print(_write(Path(args.out), f"loss-hist-e{args.epoch}", tag, "csv", hist.to_csv()))
    return EXIT_OK


def cmd_lemma_check(args) -> int:
    cfg = _resolve(args, required=False)
    report, payload = lemma_report(cfg)
    payload["config_hash"] = cfg.hash()
    _write(Path(args.out), "risk-report", cfg.hash(), "json", _json(payload))
    print(_json({"verdict": report.verdict, "eta_bound": report.eta_bound}), end="")
    return 1 if report.verdict == "FAIL" else EXIT_OK


def cmd_noise_stats(args) -> int:
    cfg = _resolve(args)
    tag = cfg.hash()
    stats = noise_stats(noisy_pool(cfg))
    out = Path(args.out)
    _write(out, "noise-summary", tag, "json", _json({
        "flip_rate": stats.flip_rate,
        "per_class_flip": stats.per_class_flip.tolist(),
        "noise": {"kind": cfg.noise.kind, "tau": cfg.noise.tau, "seed": cfg.noise.seed},
        "config_hash": tag,
    }))
    print(_write(out, "transition", tag, "csv", transition_csv(stats)))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "sweep-r": cmd_sweep_r,
    "perturb-sigma": cmd_perturb_sigma,
    "hist": cmd_hist,
    "lemma-check": cmd_lemma_check,
    "noise-stats": cmd_noise_stats,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rtme", description="Regularly truncated M-estimators for noisy labels")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="run config (INI)")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override every seed in the config")
        if name == "hist":
            p.add_argument("--epoch", type=int, required=True)
    return parser


def _fail(code, kind, exc):
    err = {"error": kind, "message": str(exc), "exit_code": code}
    if isinstance(exc, FileNotFoundError) and exc.filename:
        err["path"] = str(exc.filename)
    print(json.dumps(err, sort_keys=True), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError, FormatError, FileNotFoundError) as exc:
        return _fail(EXIT_CONFIG, type(exc).__name__, exc)
    except NumericError as exc:
        return _fail(EXIT_NUMERIC, "NumericError", exc)


if __name__ == "__main__":
    sys.exit(main())

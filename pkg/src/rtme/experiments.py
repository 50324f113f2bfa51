"""Experiment orchestration shared by the CLI and the scripts in scripts/."""

from __future__ import annotations

import csv
import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from rtme.config import RunConfig
from rtme.data import SplitDataset, build_split, load_idx, make_gaussian_mixture
from rtme.errors import ConfigError
from rtme.estimators import EstimatorSpec
from rtme.noise import LabeledDataset, inject
from rtme.theory import Psi, bundled_task, corollary1_check, lemma1_check
from rtme.trainer import RunRecord, train


def clean_pool_and_test(cfg: RunConfig) -> tuple[LabeledDataset, LabeledDataset]:
    ds = cfg.dataset
    if ds.kind == "mixture":
        full = make_gaussian_mixture(ds.k, ds.n + ds.n_test, ds.dim, ds.separation, ds.seed, ds.cluster_std)
        return full.subset(np.arange(ds.n)), full.subset(np.arange(ds.n, ds.n + ds.n_test))
    rng = np.random.default_rng(ds.seed)
    pool = load_idx(ds.images, ds.labels, ds.k)
    if ds.test_images and ds.test_labels:
        test = load_idx(ds.test_images, ds.test_labels, ds.k)
    else:
        perm = rng.permutation(pool.n)
        test, pool = pool.subset(np.sort(perm[: ds.n_test])), pool.subset(np.sort(perm[ds.n_test :]))
    if ds.subset is not None and ds.subset < pool.n:
        pool = pool.subset(np.sort(rng.permutation(pool.n)[: ds.subset]))
    return pool, test


def make_split(cfg: RunConfig) -> SplitDataset:
    pool, test = clean_pool_and_test(cfg)
    return build_split(pool, test, cfg.noise, cfg.val_fraction, cfg.dataset.seed)


def run(cfg: RunConfig, split: SplitDataset | None = None, **hooks):
    if split is None:
        split = make_split(cfg)
    tau = cfg.smallloss_tau if cfg.smallloss_tau is not None else cfg.noise.tau
    return train(cfg.method, cfg.train, split, tau=tau, T_k=cfg.T_k, **hooks)


def _summary_job(cfg: RunConfig):
    _, rec = run(cfg)
    return rec


def run_many(cfgs, workers=1) -> list[RunRecord]:
    """Run independent configs; results keep the input order."""
    if workers <= 1:
        return [_summary_job(c) for c in cfgs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_summary_job, cfgs))


def _table_csv(header, rows, version) -> str:
    buf = io.StringIO()
    buf.write(version + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    return buf.getvalue()


def read_table_csv(text: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# rtme-"):
        raise ValueError("missing rtme schema header")
    return list(csv.DictReader(lines[1:]))


# ---- R sweep ---------------------------------------------------------------


@dataclass
class SweepResult:
    rows: list[tuple]  # one per (R, seed)
    summary: list[tuple]  # one per R: (R, n, mean, std)

    def rows_csv(self):
        return _table_csv(("R", "seed", "best_epoch", "best_val_acc", "test_acc_at_best", "final_test_acc"), self.rows, "# rtme-sweep-r v1")

    def summary_csv(self):
        return _table_csv(("R", "n_seeds", "mean_test_acc", "std_test_acc"), self.summary, "# rtme-sweep-r-summary v1")


def sweep_r(cfg: RunConfig) -> SweepResult:
    if not cfg.sweep.R or min(cfg.sweep.R) < 2:
        raise ConfigError(f"[sweep] R values must all be >= 2, got {cfg.sweep.R}")
    jobs = [(R, s) for R in cfg.sweep.R for s in cfg.sweep.seeds]
    cfgs = [replace(cfg.with_seed(s), method="rtme", train=replace(cfg.with_seed(s).train, R=R)) for R, s in jobs]
    recs = run_many(cfgs, cfg.sweep.workers)
    rows = [(R, s, r.best_epoch, r.best_val_acc, r.test_acc_at_best, r.rows[-1].test_acc) for (R, s), r in zip(jobs, recs)]
    summary = []
    for R in cfg.sweep.R:
        accs = np.array([row[4] for row in rows if row[0] == R])
        summary.append((R, len(accs), float(accs.mean()), float(accs.std())))
    return SweepResult(rows, summary)


# ---- sigma perturbation ------------------------------------------------------

VARIANTS = ("rtme", "truncated")


@dataclass
class PerturbResult:
    deltas: tuple[float, ...]
    rows: list[tuple]  # (variant, delta, seed, test_acc_at_best)
    mean_acc: dict  # variant -> list aligned with deltas
    gap: dict  # variant -> list of acc(0) - acc(delta)

    def rows_csv(self):
        return _table_csv(("variant", "sigma_perturb", "seed", "test_acc_at_best"), self.rows, "# rtme-perturb-sigma v1")

    def summary_csv(self):
        header = ["variant", "statistic", *[f"d{d:+g}" for d in self.deltas]]
        out = []
        for v in VARIANTS:
            out.append((v, "mean_test_acc", *self.mean_acc[v]))
            out.append((v, "stability_gap", *self.gap[v]))
        return _table_csv(header, out, "# rtme-perturb-sigma-summary v1")


def perturb_sigma_sweep(cfg: RunConfig) -> PerturbResult:
    deltas = tuple(cfg.sweep.sigma_perturb)
    if not deltas or min(deltas) <= -1:
        raise ConfigError(f"[sweep] sigma_perturb values must all be > -1, got {deltas}")
    run_deltas = deltas if 0.0 in deltas else (0.0, *deltas)
    jobs, cfgs = [], []
    for v in VARIANTS:
        for d in run_deltas:
            for s in cfg.sweep.seeds:
                c = cfg.with_seed(s)
                c = replace(c, method=v, train=replace(c.train, sigma_perturb=d))
                jobs.append((v, d, s))
                cfgs.append(c)
    recs = run_many(cfgs, cfg.sweep.workers)
    rows = [(v, d, s, r.test_acc_at_best) for (v, d, s), r in zip(jobs, recs)]
    mean_acc, gap = {}, {}
    for v in VARIANTS:
        by_d = {d: float(np.mean([r[3] for r in rows if r[0] == v and r[1] == d])) for d in run_deltas}
        mean_acc[v] = [by_d[d] for d in deltas]
        gap[v] = [by_d[0.0] - by_d[d] for d in deltas]
    return PerturbResult(deltas, [r for r in rows if r[1] in deltas], mean_acc, gap)


# ---- loss histogram ----------------------------------------------------------


@dataclass
class HistogramExport:
    epoch: int
    edges: np.ndarray
    clean: np.ndarray
    mislabeled: np.ndarray

    @property
    def proportion_clean(self):
        total = self.clean + self.mislabeled
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(total > 0, self.clean / np.maximum(total, 1), np.nan)

    def to_csv(self):
        rows = [
            (int(i), float(lo), float(hi), int(c), int(m), int(c + m), float(p))
            for i, (lo, hi, c, m, p) in enumerate(zip(self.edges[:-1], self.edges[1:], self.clean, self.mislabeled, self.proportion_clean))
        ]
        return _table_csv(("bin", "loss_lo", "loss_hi", "clean", "mislabeled", "total", "clean_proportion"), rows, f"# rtme-loss-hist v1 epoch={self.epoch}")


def loss_histogram(losses, clean_mask, bins=20, epoch=0) -> HistogramExport:
    losses = np.asarray(losses)
    hi = float(losses.max()) if losses.size and losses.max() > 0 else 1.0
    edges = np.linspace(0.0, hi, bins + 1)
    clean, _ = np.histogram(losses[clean_mask], bins=edges)
    noisy, _ = np.histogram(losses[~clean_mask], bins=edges)
    return HistogramExport(epoch, edges, clean, noisy)


def histogram_at_epoch(cfg: RunConfig, epoch: int) -> HistogramExport:
    """Train until the start of ``epoch`` and bin that epoch's loss snapshot."""
    if not 0 <= epoch < cfg.train.epochs:
        raise ConfigError(f"epoch {epoch} out of range [0, {cfg.train.epochs})")
    split = make_split(cfg)
    captured = {}

    def grab(t, model, losses, sigma):
        if t == epoch:
            captured["losses"] = losses.copy()

    short = replace(cfg, train=replace(cfg.train, epochs=epoch + 1))
    run(short, split, on_epoch_start=grab)
    return loss_histogram(captured["losses"], split.train.clean_mask, cfg.hist_bins, epoch)


# ---- noise statistics and lemma check ----------------------------------------


def noisy_pool(cfg: RunConfig) -> LabeledDataset:
    pool, _ = clean_pool_and_test(cfg)
    return inject(pool, cfg.noise)


def lemma_report(cfg: RunConfig):
    th = cfg.theory
    psi = Psi(EstimatorSpec(th.estimator, th.epsilon, th.alpha), th.sigma)
    task = bundled_task()
    if th.eta_per_instance is not None:
        eta = th.eta_per_instance
        report = corollary1_check(task, psi, eta)
    else:
        eta = th.eta
        report = lemma1_check(task, psi, eta)
    return report, report.to_dict(psi, eta)

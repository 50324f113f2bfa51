"""Run configuration: a sectioned ``key = value`` (INI) file.

Unknown sections and keys are rejected so typos cannot silently fall back to
defaults.  Lists are comma separated.  See README.md for every key.
"""

from __future__ import annotations

import configparser
import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from rtme.errors import ConfigError
from rtme.estimators import EstimatorSpec
from rtme.noise import NoiseSpec
from rtme.threshold import DEFAULT_GRID, AdaptConfig
from rtme.trainer import METHODS, TrainConfig

SCHEMA = {
    "dataset": {"kind", "n", "n_test", "k", "dim", "separation", "cluster_std", "seed", "images", "labels", "test_images", "test_labels", "subset"},
    "noise": {"kind", "tau", "seed"},
    "model": {"hidden", "activation"},
    "train": {
        "method", "estimator", "epsilon", "alpha", "R", "epochs", "batch_size", "lr", "lr_decay_epochs",
        "lr_decay_factor", "momentum", "weight_decay", "seed", "val_fraction", "T_k", "tau",
    },
    "adapt": {"mode", "grid", "bins"},
    "sigma": {"clamp_min", "perturb"},
    "sweep": {"seeds", "R", "sigma_perturb", "workers"},
    "hist": {"bins"},
    "theory": {"estimator", "epsilon", "alpha", "sigma", "eta", "eta_per_instance"},
}


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "mixture"  # mixture | idx
    n: int = 2000
    n_test: int = 2000
    k: int = 4
    dim: int = 2
    separation: float = 4.0
    cluster_std: float = 0.8
    seed: int = 0
    images: str | None = None
    labels: str | None = None
    test_images: str | None = None
    test_labels: str | None = None
    subset: int | None = None


@dataclass(frozen=True)
class SweepConfig:
    seeds: tuple[int, ...] = (0,)
    R: tuple[int, ...] = (2,)
    sigma_perturb: tuple[float, ...] = (0.0,)
    workers: int = 1


@dataclass(frozen=True)
class TheoryConfig:
    estimator: str = "catoni"
    epsilon: float = 1.0
    alpha: float = 1.0
    sigma: float = 2.0
    eta: float = 0.0
    eta_per_instance: tuple[float, ...] | None = None


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    method: str = "rtme"
    val_fraction: float = 0.1
    T_k: int = 10
    smallloss_tau: float | None = None
    sweep: SweepConfig = field(default_factory=SweepConfig)
    hist_bins: int = 20
    theory: TheoryConfig = field(default_factory=TheoryConfig)
    source: str | None = None  # path the config was read from

    def with_seed(self, seed: int) -> "RunConfig":
        """Override every seed (data, noise, training) with one value."""
        return replace(
            self,
            dataset=replace(self.dataset, seed=seed),
            noise=replace(self.noise, seed=seed),
            train=replace(self.train, seed=seed),
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d.pop("source")
        return d

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list).encode()
        return hashlib.sha1(blob).hexdigest()[:12]


def _int_or_none(v):
    return None if v.lower() in ("none", "inf", "") else int(v)


def _ints(v):
    return tuple(int(x) for x in v.split(",") if x.strip())


def _floats(v):
    return tuple(float(x) for x in v.split(",") if x.strip())


def _get(section, key, conv, default):
    if key not in section:
        return default
    raw = section[key].strip()
    try:
        return conv(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section.name}] {key} = {raw!r}: {exc}") from None


def parse_config_text(text: str, base_dir: Path | None = None, source=None) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case-sensitive (R, T_k)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from None
    if cp.defaults():
        raise ConfigError("keys outside a section are not allowed")
    for name in cp.sections():
        if name not in SCHEMA:
            raise ConfigError(f"unknown config section [{name}]")
        for key in cp[name]:
            if key not in SCHEMA[name]:
                raise ConfigError(f"unknown config key [{name}] {key}")
    sec = {name: cp[name] if cp.has_section(name) else cp[cp.default_section] for name in SCHEMA}
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()

    def path(v):
        p = Path(v)
        p = p if p.is_absolute() else base_dir / p
        if not p.exists():
            raise FileNotFoundError(2, "dataset file not found", str(p))
        return str(p)

    ds = sec["dataset"]
    d0 = DatasetConfig()
    dataset = DatasetConfig(
        kind=_get(ds, "kind", str, d0.kind),
        n=_get(ds, "n", int, d0.n),
        n_test=_get(ds, "n_test", int, d0.n_test),
        k=_get(ds, "k", int, d0.k),
        dim=_get(ds, "dim", int, d0.dim),
        separation=_get(ds, "separation", float, d0.separation),
        cluster_std=_get(ds, "cluster_std", float, d0.cluster_std),
        seed=_get(ds, "seed", int, d0.seed),
        images=_get(ds, "images", path, None),
        labels=_get(ds, "labels", path, None),
        test_images=_get(ds, "test_images", path, None),
        test_labels=_get(ds, "test_labels", path, None),
        subset=_get(ds, "subset", _int_or_none, None),
    )
    if dataset.kind not in ("mixture", "idx"):
        raise ConfigError(f"[dataset] kind must be 'mixture' or 'idx', got {dataset.kind!r}")
    if dataset.kind == "idx" and not (dataset.images and dataset.labels):
        raise ConfigError("[dataset] kind = idx needs images and labels paths")

    nz = sec["noise"]
    noise = NoiseSpec(_get(nz, "kind", str, "none"), _get(nz, "tau", float, 0.0), _get(nz, "seed", int, 0))

    tr, md, ad, sg = sec["train"], sec["model"], sec["adapt"], sec["sigma"]
    t0 = TrainConfig()
    estimator = EstimatorSpec(
        _get(tr, "estimator", str, "catoni"),
        epsilon=_get(tr, "epsilon", float, 1.0),
        alpha=_get(tr, "alpha", float, 1.0),
    )
    adapt = AdaptConfig(_get(ad, "mode", str, "fixed"), _get(ad, "grid", _floats, DEFAULT_GRID), _get(ad, "bins", int, 32))
    train = TrainConfig(
        epochs=_get(tr, "epochs", int, t0.epochs),
        batch_size=_get(tr, "batch_size", int, t0.batch_size),
        lr=_get(tr, "lr", float, t0.lr),
        lr_decay_epochs=_get(tr, "lr_decay_epochs", _ints, t0.lr_decay_epochs),
        lr_decay_factor=_get(tr, "lr_decay_factor", float, t0.lr_decay_factor),
        momentum=_get(tr, "momentum", float, t0.momentum),
        weight_decay=_get(tr, "weight_decay", float, t0.weight_decay),
        estimator=estimator,
        R=_get(tr, "R", _int_or_none, t0.R),
        adapt=adapt,
        sigma_perturb=_get(sg, "perturb", float, 0.0),
        sigma_clamp_min=_get(sg, "clamp_min", float, t0.sigma_clamp_min),
        hidden=_get(md, "hidden", _ints, t0.hidden),
        activation=_get(md, "activation", str, t0.activation),
        seed=_get(tr, "seed", int, t0.seed),
    )
    method = _get(tr, "method", str, "rtme")
    if method not in METHODS:
        raise ConfigError(f"[train] method must be one of {METHODS}, got {method!r}")

    sw = sec["sweep"]
    sweep = SweepConfig(
        seeds=_get(sw, "seeds", _ints, (train.seed,)),
        R=_get(sw, "R", _ints, (train.R or 2,)),
        sigma_perturb=_get(sw, "sigma_perturb", _floats, (0.0,)),
        workers=_get(sw, "workers", int, 1),
    )
    th = sec["theory"]
    theory = TheoryConfig(
        estimator=_get(th, "estimator", str, "catoni"),
        epsilon=_get(th, "epsilon", float, 1.0),
        alpha=_get(th, "alpha", float, 1.0),
        sigma=_get(th, "sigma", lambda v: float("inf") if v.lower() == "inf" else float(v), 2.0),
        eta=_get(th, "eta", float, 0.0),
        eta_per_instance=_get(th, "eta_per_instance", _floats, None),
    )
    return RunConfig(
        dataset=dataset,
        noise=noise,
        train=train,
        method=method,
        val_fraction=_get(tr, "val_fraction", float, 0.1),
        T_k=_get(tr, "T_k", int, 10),
        smallloss_tau=_get(tr, "tau", float, None),
        sweep=sweep,
        hist_bins=_get(sec["hist"], "bins", int, 20),
        theory=theory,
        source=source,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(2, "config file not found", str(path))
    return parse_config_text(path.read_text(), base_dir=path.parent, source=str(path))

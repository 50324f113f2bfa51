"""Label-noise synthesis: symmetric, pairflip and instance-dependent.

Stream order for a generator ``rng`` (numpy PCG64 from ``default_rng(seed)``):

* symmetric: ``rng.random(n)`` flip draws, then ``rng.integers(1, k, n)``
  class offsets.
* pairflip: ``rng.random(n)`` flip draws.
* instance: truncated-normal rates ``q`` (n draws), projection matrix
  ``standard_normal((d, k))``, then ``rng.random(n)`` for label sampling.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace

import numpy as np
from scipy.stats import truncnorm

from rtme.errors import ConfigError

NOISE_KINDS = ("none", "sym", "pair", "ins")
INSTANCE_RATE_STD = 0.1


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "none"
    tau: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"noise.kind must be one of {NOISE_KINDS}, got {self.kind!r}")
        if not 0 <= self.tau < 1:
            raise ConfigError(f"noise.tau must lie in [0, 1), got {self.tau}")
        if self.kind == "pair" and self.tau >= 0.5:
            raise ConfigError(f"pairflip needs tau < 0.5, got {self.tau}")


@dataclass
class LabeledDataset:
    features: np.ndarray  # (n, d)
    clean_labels: np.ndarray  # (n,)
    noisy_labels: np.ndarray  # (n,)
    k: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.clean_labels = np.asarray(self.clean_labels, dtype=np.int64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        n = len(self.features)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if self.clean_labels.shape != (n,) or self.noisy_labels.shape != (n,):
            raise ConfigError("label arrays must match the number of feature rows")
        for labels in (self.clean_labels, self.noisy_labels):
            if n and (labels.min() < 0 or labels.max() >= self.k):
                raise ConfigError(f"labels must lie in [0, {self.k})")

    @classmethod
    def clean(cls, features, labels, k):
        labels = np.asarray(labels, dtype=np.int64)
        return cls(features, labels, labels.copy(), k)

    @property
    def n(self) -> int:
        return len(self.clean_labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def clean_mask(self) -> np.ndarray:
        return self.noisy_labels == self.clean_labels

    def subset(self, idx) -> "LabeledDataset":
        idx = np.asarray(idx)
        return LabeledDataset(self.features[idx], self.clean_labels[idx], self.noisy_labels[idx], self.k)

    def with_noisy(self, noisy) -> "LabeledDataset":
        return replace(self, noisy_labels=np.asarray(noisy, dtype=np.int64))


def _require_classes(dataset):
    if dataset.k < 2:
        raise ConfigError(f"label noise needs at least 2 classes, got k={dataset.k}")


def inject_symmetric(dataset: LabeledDataset, tau, rng) -> LabeledDataset:
    """Flip with probability tau to a uniformly chosen *other* class."""
    _require_classes(dataset)
    if not 0 <= tau < 1:
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    y = dataset.clean_labels
    flip = rng.random(len(y)) < tau
    offset = rng.integers(1, dataset.k, size=len(y))
    return dataset.with_noisy(np.where(flip, (y + offset) % dataset.k, y))


def inject_pairflip(dataset: LabeledDataset, tau, rng) -> LabeledDataset:
    """Flip y to (y + 1) mod k with probability tau."""
    _require_classes(dataset)
    if not 0 <= tau < 0.5:
        raise ConfigError(f"pairflip needs 0 <= tau < 0.5, got {tau}")
    y = dataset.clean_labels
    flip = rng.random(len(y)) < tau
    return dataset.with_noisy(np.where(flip, (y + 1) % dataset.k, y))


def instance_flip_probs(features, labels, rates, projection) -> np.ndarray:
    """Per-example label distribution for instance-dependent noise.

    Class scores ``x @ projection`` with the true class masked out go through
    a softmax and are scaled by the example's flip rate; the true class keeps
    ``1 - rate``.
    """
    scores = np.asarray(features) @ projection
    n = len(labels)
    rows = np.arange(n)
    scores[rows, labels] = -np.inf
    scores -= scores.max(axis=1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=1, keepdims=True)
    p *= np.asarray(rates)[:, None]
    p[rows, labels] = 1.0 - rates
    return p


def sample_rows(probs, u) -> np.ndarray:
    """Inverse-CDF draw of one class per row from uniforms ``u``."""
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] >= cdf).sum(axis=1)


def inject_instance(dataset: LabeledDataset, tau, rng) -> LabeledDataset:
    _require_classes(dataset)
    if not 0 <= tau < 1:
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    if tau == 0:
        # a truncated normal at 0 still has mean ~0.08; tau=0 means no noise
        return dataset.with_noisy(dataset.clean_labels.copy())
    n, d, k = dataset.n, dataset.dim, dataset.k
    s = INSTANCE_RATE_STD
    rates = truncnorm.rvs((0 - tau) / s, (1 - tau) / s, loc=tau, scale=s, size=n, random_state=rng)
    projection = rng.standard_normal((d, k))
    probs = instance_flip_probs(dataset.features, dataset.clean_labels, rates, projection)
    return dataset.with_noisy(sample_rows(probs, rng.random(n)))


_INJECTORS = {"sym": inject_symmetric, "pair": inject_pairflip, "ins": inject_instance}


def inject(dataset: LabeledDataset, spec: NoiseSpec) -> LabeledDataset:
    if spec.kind == "none" or spec.tau == 0:
        return dataset.with_noisy(dataset.clean_labels.copy())
    return _INJECTORS[spec.kind](dataset, spec.tau, np.random.default_rng(spec.seed))


@dataclass
class NoiseStats:
    transition: np.ndarray  # (k, k), row = clean class, column = observed class
    flip_rate: float
    per_class_flip: np.ndarray
    class_counts: np.ndarray


def noise_stats(dataset: LabeledDataset) -> NoiseStats:
    k = dataset.k
    counts = np.zeros((k, k), dtype=np.int64)
    np.add.at(counts, (dataset.clean_labels, dataset.noisy_labels), 1)
    totals = counts.sum(axis=1)
    trans = np.eye(k)
    seen = totals > 0
    trans[seen] = counts[seen] / totals[seen, None]
    per_class = 1.0 - np.diag(trans)
    flip = float(1.0 - dataset.clean_mask.mean()) if dataset.n else 0.0
    return NoiseStats(trans, flip, per_class, totals)


def transition_csv(stats: NoiseStats) -> str:
    k = len(stats.transition)
    buf = io.StringIO()
    buf.write("# rtme-transition v1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clean_class", "count", *[f"to_{j}" for j in range(k)]])
    for i in range(k):
        w.writerow([i, int(stats.class_counts[i]), *[repr(float(v)) for v in stats.transition[i]]])
    return buf.getvalue()

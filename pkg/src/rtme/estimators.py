"""Robust M-estimators of the per-example loss and their truncated variants.

Each estimator is a transform ``phi(L)`` of the CE loss ``L >= 0``.  Its
gradient is ``weight(L) * grad(L)``, so training only needs the scalar
``weight``.  Truncation at ``sigma`` freezes ``phi`` above the threshold,
which zeroes the weight there.

All functions accept scalars or numpy arrays.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from rtme.errors import ConfigError, InputError

KINDS = ("ce", "catoni", "logsum", "welsch+")


class Mode(str, enum.Enum):
    ORIGINAL = "original"
    TRUNCATED = "truncated"


@dataclass(frozen=True)
class EstimatorSpec:
    kind: str = "ce"
    epsilon: float = 1.0  # logsum only
    alpha: float = 1.0  # welsch+ only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator {self.kind!r}; expected one of {KINDS}")
        if self.kind == "logsum" and not (self.epsilon >= 1 and np.isfinite(self.epsilon)):
            raise ConfigError(f"logsum needs epsilon in [1, inf), got {self.epsilon}")
        if self.kind == "welsch+" and not (self.alpha > 0 and np.isfinite(self.alpha)):
            raise ConfigError(f"welsch+ needs alpha in (0, inf), got {self.alpha}")

    @property
    def adaptable(self) -> bool:
        return self.kind in ("logsum", "welsch+")

    @property
    def param(self) -> float | None:
        return {"logsum": self.epsilon, "welsch+": self.alpha}.get(self.kind)

    def with_param(self, value: float) -> "EstimatorSpec":
        if self.kind == "logsum":
            return replace(self, epsilon=float(value))
        if self.kind == "welsch+":
            return replace(self, alpha=float(value))
        raise ConfigError(f"estimator {self.kind!r} has no intrinsic parameter")


def _losses(L):
    arr = np.asarray(L, dtype=np.float64)
    if np.any(np.isnan(arr)) or np.any(arr < 0):
        raise InputError("losses must be non-negative and not NaN")
    return arr


def _out(x, like):
    return float(x) if np.ndim(like) == 0 else x


def phi(spec: EstimatorSpec, L):
    arr = _losses(L)
    if spec.kind == "ce":
        out = arr.copy()
    elif spec.kind == "catoni":
        out = np.log1p(arr + arr * arr / 2)
    elif spec.kind == "logsum":
        out = np.log1p(arr / spec.epsilon)
    else:
        out = -np.expm1(-arr / spec.alpha**2)
    return _out(out, L)


def weight(spec: EstimatorSpec, L):
    """dphi/dL."""
    arr = _losses(L)
    if spec.kind == "ce":
        out = np.ones_like(arr)
    elif spec.kind == "catoni":
        out = (1 + arr) / (1 + arr + arr * arr / 2)
    elif spec.kind == "logsum":
        out = spec.epsilon / (spec.epsilon + arr)
    else:
        a2 = spec.alpha**2
        out = np.exp(-arr / a2) / a2
    return _out(out, L)


def _check_sigma(sigma):
    if not sigma > 0:
        raise InputError(f"truncation point must be positive, got {sigma}")


def phi_truncated(spec: EstimatorSpec, L, sigma):
    _check_sigma(sigma)
    arr = _losses(L)
    plateau = phi(spec, sigma) if np.isfinite(sigma) else np.inf
    out = np.where(arr <= sigma, phi(spec, arr), plateau)
    return _out(out, L)


def weight_truncated(spec: EstimatorSpec, L, sigma):
    """Weight of the truncated estimator; the point L == sigma keeps its weight."""
    _check_sigma(sigma)
    arr = _losses(L)
    out = np.where(arr <= sigma, weight(spec, arr), 0.0)
    return _out(out, L)


def epoch_mode(T: int, R: int | None) -> Mode:
    """Original at T mod R == 0, Truncated otherwise.

    ``R=None`` means an infinite period: only epoch 0 is Original.
    """
    if T < 0:
        raise ConfigError(f"epoch index must be >= 0, got {T}")
    if R is None:
        return Mode.ORIGINAL if T == 0 else Mode.TRUNCATED
    if R < 1:
        raise ConfigError(f"period R must be >= 1, got {R}")
    return Mode.ORIGINAL if T % R == 0 else Mode.TRUNCATED


def batch_weights(spec: EstimatorSpec, mode: Mode, losses, sigma) -> np.ndarray:
    losses = np.asarray(losses, dtype=np.float64)
    if Mode(mode) is Mode.ORIGINAL:
        return np.asarray(weight(spec, losses), dtype=np.float64)
    return np.asarray(weight_truncated(spec, losses, sigma), dtype=np.float64)


@dataclass
class EpochSchedule:
    R: int | None
    T: int = 0
    sigma: float = float("inf")

    @property
    def mode(self) -> Mode:
        return epoch_mode(self.T, self.R)

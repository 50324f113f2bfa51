"""Adaptive truncation point and intrinsic-parameter selection."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from rtme.errors import ConfigError, InputError
from rtme.estimators import phi

SIGMA_MIN = 1e-3
DEFAULT_GRID = (1.0, 1.5, 2.0, 2.5, 3.0)


@dataclass(frozen=True)
class AdaptConfig:
    mode: str = "fixed"  # "fixed" | "gaussian"
    candidate_grid: tuple[float, ...] = DEFAULT_GRID
    bin_count: int = 32

    def __post_init__(self):
        if self.mode not in ("fixed", "gaussian"):
            raise ConfigError(f"adapt.mode must be 'fixed' or 'gaussian', got {self.mode!r}")
        if self.bin_count < 2:
            raise ConfigError(f"adapt.bins must be >= 2, got {self.bin_count}")
        if not self.candidate_grid or min(self.candidate_grid) <= 0:
            raise ConfigError("adapt.grid must be a nonempty list of positive values")


@dataclass(frozen=True)
class ThresholdStats:
    median: float
    mean: float
    std: float
    sigma: float  # after clamping


def _snapshot(losses):
    arr = np.asarray(losses, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InputError("loss snapshot is empty")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise InputError("loss snapshot must be finite and non-negative")
    return arr


def three_sigma_stats(losses, clamp_min=SIGMA_MIN) -> ThresholdStats:
    arr = _snapshot(losses)
    med = float(np.median(arr))
    below = arr[arr <= med]
    mu = float(np.mean(below))
    sd = float(np.std(below))
    return ThresholdStats(med, mu, sd, max(mu + 3 * sd, clamp_min))


def three_sigma_threshold(losses, clamp_min=SIGMA_MIN) -> float:
    """mean + 3*std of the losses at or below the median, clamped below."""
    return three_sigma_stats(losses, clamp_min).sigma


def select_small_loss(losses, sigma) -> np.ndarray:
    if sigma < 0:
        raise InputError(f"sigma must be >= 0, got {sigma}")
    return np.flatnonzero(np.asarray(losses) <= sigma)


def perturb_sigma(sigma, delta_fraction):
    if not delta_fraction > -1:
        raise ConfigError(f"sigma perturbation must be > -1, got {delta_fraction}")
    return sigma * (1 + delta_fraction)


def gaussian_fit_distance(values, bins) -> float:
    """L2 gap between the binned histogram of ``values`` and a fitted normal.

    Both sides are normalized to sum to 1 over the bins.  Returns inf when the
    values have zero spread.
    """
    mu, sd = float(np.mean(values)), float(np.std(values))
    if sd == 0 or not np.isfinite(sd):
        return float("inf")
    counts, edges = np.histogram(values, bins=bins, range=(values.min(), values.max()))
    hist = counts / counts.sum()
    centers = (edges[:-1] + edges[1:]) / 2
    dens = norm.pdf(centers, loc=mu, scale=sd)
    dens = dens / dens.sum()
    return float(np.linalg.norm(hist - dens))


def adapt_parameter(spec, small_losses, config: AdaptConfig, current=None) -> float:
    """Pick epsilon (logsum) or alpha (welsch+) from the candidate grid.

    Fixed mode always answers 1.0.  Gaussian mode transforms the small-loss
    set with each candidate and keeps the one whose histogram is closest to
    its own fitted normal; ties go to the smaller candidate.
    """
    if config.mode == "fixed":
        return 1.0
    if not spec.adaptable:
        raise ConfigError(f"estimator {spec.kind!r} has no parameter to adapt")
    if current is None:
        current = spec.param
    arr = np.asarray(small_losses, dtype=np.float64)
    if arr.size == 0:
        raise InputError("no small-loss examples to adapt on")
    # every candidate transform is strictly monotone, so zero spread here
    # means zero spread for all of them
    if arr.size < 2 or np.ptp(arr) == 0:
        return float(current)

    grid = sorted(float(p) for p in config.candidate_grid)
    if spec.kind == "logsum" and grid[0] < 1:
        raise ConfigError("logsum candidates must be >= 1")
    best, best_d = float(current), float("inf")
    for p in grid:
        d = gaussian_fit_distance(phi(spec.with_param(p), arr), config.bin_count)
        if d < best_d:
            best, best_d = p, d
    return best

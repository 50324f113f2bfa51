"""Exact enumeration check of noise tolerance for truncated M-estimators.

A ``FiniteTask`` has finitely many instances with known marginals and clean
labels.  A hypothesis assigns each instance one probability vector from a
shared alphabet, so the hypothesis class is the full product
``alphabet ** n_instances`` and every risk is an exact finite sum.

The loss is ``psi(p, i) = phi_truncated(-log p_i)``.  Under symmetric noise
with rate eta, a hypothesis f can only beat the clean minimizer f* on the
noisy risk when

    (c2 - c1 - k*D) * eta + (k - 1) * D >= 0,   D = R(f*) - R(f) <= 0,

where c1 <= sum_i psi(f(x), i) <= c2.  Equivalently eta must stay below
(1 - k) D / (c2 - c1 - k D) for every f outside the clean argmin set.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from rtme.errors import InputError
from rtme.estimators import EstimatorSpec, phi_truncated

ARGMIN_ATOL = 1e-12


@dataclass(frozen=True)
class Psi:
    spec: EstimatorSpec
    sigma: float = float("inf")

    def table(self, probs) -> np.ndarray:
        """psi for every row of ``probs`` against every class."""
        return np.asarray(phi_truncated(self.spec, -np.log(probs), self.sigma), dtype=np.float64)

    def to_dict(self):
        return {"estimator": self.spec.kind, "epsilon": self.spec.epsilon, "alpha": self.spec.alpha, "sigma": self.sigma}


@dataclass
class FiniteTask:
    marginals: np.ndarray  # (m,)
    labels: np.ndarray  # (m,) clean label of each instance
    k: int
    alphabet: np.ndarray  # (a, k) prediction vectors
    hypotheses: np.ndarray  # (H, m) alphabet index per instance

    def __post_init__(self):
        self.marginals = np.asarray(self.marginals, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.alphabet = np.asarray(self.alphabet, dtype=np.float64)
        self.hypotheses = np.asarray(self.hypotheses, dtype=np.int64).reshape(-1, len(self.marginals))
        if abs(self.marginals.sum() - 1) > 1e-12 or np.any(self.marginals < 0):
            raise InputError("instance marginals must be non-negative and sum to 1")
        if self.alphabet.shape[1] != self.k or np.any(np.abs(self.alphabet.sum(axis=1) - 1) > 1e-12):
            raise InputError("every prediction vector must have k entries summing to 1")
        if np.any(self.alphabet <= 0) or np.any(self.alphabet >= 1):
            raise InputError("prediction vectors must be strictly inside the simplex")

    @classmethod
    def full_product(cls, marginals, labels, k, alphabet):
        m = len(marginals)
        hyps = np.array(list(itertools.product(range(len(alphabet)), repeat=m)), dtype=np.int64)
        return cls(marginals, labels, k, alphabet, hyps)

    @property
    def n_instances(self):
        return len(self.marginals)


def bundled_task() -> FiniteTask:
    """3 classes, 4 instances, 5 prediction vectors: 625 hypotheses."""
    alphabet = [
        [0.8, 0.1, 0.1],
        [0.1, 0.8, 0.1],
        [0.1, 0.1, 0.8],
        [1 / 3, 1 / 3, 1 / 3],
        [0.6, 0.3, 0.1],
    ]
    return FiniteTask.full_product([0.4, 0.3, 0.2, 0.1], [0, 1, 2, 0], 3, alphabet)


def random_task(rng, k=3, m=4, a=4, n_hyp=None) -> FiniteTask:
    marg = rng.dirichlet(np.ones(m))
    labels = rng.integers(0, k, size=m)
    alphabet = rng.dirichlet(np.ones(k), size=a)
    alphabet = np.clip(alphabet, 1e-6, None)
    alphabet /= alphabet.sum(axis=1, keepdims=True)
    if n_hyp is None:
        return FiniteTask.full_product(marg, labels, k, alphabet)
    return FiniteTask(marg, labels, k, alphabet, rng.integers(0, a, size=(n_hyp, m)))


def _loss_tables(task, psi):
    """(H, m, k) losses of each hypothesis at each instance for each class."""
    return psi.table(task.alphabet)[task.hypotheses]


def _true_class(losses, labels):
    return np.take_along_axis(losses, labels[None, :, None], axis=2)[..., 0]


def clean_risk(task: FiniteTask, hypothesis, psi: Psi) -> float:
    """E_x[psi(f(x), y(x))] for one hypothesis (row of alphabet indices)."""
    tab = psi.table(task.alphabet)[np.asarray(hypothesis)]
    return float(np.dot(task.marginals, tab[np.arange(task.n_instances), task.labels]))


def _eta_vector(task, eta):
    eta = np.broadcast_to(np.asarray(eta, dtype=np.float64), (task.n_instances,))
    if np.any(eta < 0) or np.any(eta >= (task.k - 1) / task.k):
        raise InputError(f"noise rates must lie in [0, (k-1)/k), got {eta}")
    return eta


def noisy_risk_direct(task: FiniteTask, hypothesis, psi: Psi, eta) -> float:
    """Expectation over the flip distribution, class by class."""
    eta = _eta_vector(task, eta)
    tab = psi.table(task.alphabet)[np.asarray(hypothesis)]
    k = task.k
    total = 0.0
    for x in range(task.n_instances):
        y = task.labels[x]
        inner = (1 - eta[x]) * tab[x, y]
        for i in range(k):
            if i != y:
                inner += eta[x] / (k - 1) * tab[x, i]
        total += task.marginals[x] * inner
    return float(total)


def noisy_risk_identity(task: FiniteTask, hypothesis, psi: Psi, eta) -> float:
    """Rearranged form: E[(1 - eta k/(k-1)) psi_y + eta/(k-1) sum_i psi_i]."""
    eta = _eta_vector(task, eta)
    tab = psi.table(task.alphabet)[np.asarray(hypothesis)]
    k = task.k
    psi_y = tab[np.arange(task.n_instances), task.labels]
    coef = 1 - eta * k / (k - 1)
    return float(np.dot(task.marginals, coef * psi_y + eta / (k - 1) * tab.sum(axis=1)))


def _argmin_set(values):
    lo = values.min()
    return np.flatnonzero(values <= lo + ARGMIN_ATOL * max(1.0, abs(lo)))


@dataclass
class RiskReport:
    clean_risks: np.ndarray
    noisy_risks: np.ndarray
    clean_argmin: np.ndarray
    noisy_argmin: np.ndarray
    c1: float
    c2: float
    delta_proof: np.ndarray  # R(f*) - R(f), <= 0
    delta_prose: np.ndarray  # R(f) - R(f*), >= 0
    eta_bound: float  # min over f outside the clean argmin of the proof-convention bound
    eta_bound_prose: float  # same formula with the prose sign convention
    preconditions_hold: bool
    contained: bool  # clean argmin subset of noisy argmin
    verdict: str  # PASS | FAIL | INFORMATIONAL
    notes: list[str] = field(default_factory=list)

    def to_dict(self, psi: Psi | None = None, eta=None) -> dict:
        d = {
            "verdict": self.verdict,
            "preconditions_hold": self.preconditions_hold,
            "clean_argmin_in_noisy_argmin": self.contained,
            "c1": self.c1,
            "c2": self.c2,
            "eta_bound": self.eta_bound,
            "eta_bound_prose_convention": self.eta_bound_prose,
            "bound_convention": "proof (delta = R(f*) - R(f) <= 0)",
            "n_hypotheses": len(self.clean_risks),
            "clean_argmin": self.clean_argmin.tolist(),
            "noisy_argmin": self.noisy_argmin.tolist(),
            "min_clean_risk": float(self.clean_risks.min()),
            "min_noisy_risk": float(self.noisy_risks.min()),
            "notes": list(self.notes),
        }
        if psi is not None:
            d["psi"] = psi.to_dict()
        if eta is not None:
            d["eta"] = np.asarray(eta).tolist()
        return d


def _bounds(delta, c1, c2, k):
    """(1 - k) D / (c2 - c1 - k D) per hypothesis; nan where the denominator is <= 0."""
    denom = c2 - c1 - k * delta
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, (1 - k) * delta / denom, np.nan)


def _check(task: FiniteTask, psi: Psi, eta_vec):
    if len(task.hypotheses) == 0:
        raise InputError("hypothesis set is empty")
    k = task.k
    losses = _loss_tables(task, psi)
    psi_y = _true_class(losses, task.labels)
    sums = losses.sum(axis=2)
    c1, c2 = float(sums.min()), float(sums.max())

    clean = psi_y @ task.marginals
    coef = 1 - eta_vec * k / (k - 1)
    noisy = (coef * psi_y + eta_vec / (k - 1) * sums) @ task.marginals
    clean_set, noisy_set = _argmin_set(clean), _argmin_set(noisy)
    contained = bool(np.isin(clean_set, noisy_set).all())

    r_star = clean[clean_set].min()
    delta = r_star - clean
    others = np.setdiff1d(np.arange(len(clean)), clean_set)
    bounds = _bounds(delta[others], c1, c2, k)
    prose = _bounds(-delta[others], c1, c2, k)
    eta_bound = float(np.min(bounds)) if others.size and not np.isnan(bounds).any() else (float("inf") if not others.size else float("nan"))
    eta_prose = float(np.nanmin(prose)) if others.size and not np.isnan(prose).all() else float("nan")
    return losses, psi_y, sums, clean, noisy, clean_set, noisy_set, contained, delta, others, c1, c2, eta_bound, eta_prose


def _verdict(eta_is_zero, preconditions, contained):
    if eta_is_zero or preconditions:
        return "PASS" if contained else "FAIL"
    return "INFORMATIONAL"


def lemma1_check(task: FiniteTask, psi: Psi, eta: float) -> RiskReport:
    """Enumerate all hypotheses under symmetric noise with rate ``eta``.

    PASS/FAIL is only asserted when the bound verifiably holds (or eta == 0);
    otherwise the verdict is INFORMATIONAL since the statement is
    one-directional.
    """
    eta_vec = _eta_vector(task, eta)
    (_, _, _, clean, noisy, cset, nset, contained, delta, others, c1, c2, eta_bound, eta_prose) = _check(task, psi, eta_vec)
    notes = []
    pre = bool(float(eta) < eta_bound)  # False when the bound is nan
    if np.isnan(eta_bound):
        notes.append("c2 - c1 - k*delta <= 0 for some hypothesis; bound undefined")
    if not np.isnan(eta_prose) and eta_prose <= 0:
        notes.append("prose sign convention (delta >= 0) gives a non-positive bound; proof convention used")
    if len(cset) > 1:
        notes.append(f"clean argmin has {len(cset)} tied hypotheses")
    if not pre and float(eta) != 0:
        notes.append("bound not satisfied")
    return RiskReport(clean, noisy, cset, nset, c1, c2, delta, -delta, eta_bound, eta_prose, pre, contained, _verdict(float(eta) == 0, pre, contained), notes)


def corollary1_check(task: FiniteTask, psi: Psi, eta_per_instance) -> RiskReport:
    """Instance-dependent rates eta_x with uniform flips to the other classes.

    The precondition checked for every f outside the clean argmin (and every
    clean minimizer f*) is the aggregated inequality

        sum_x p(x) [(k - 1) d_x + eta_x (c2 - c1 - k d_x)] < 0,
        d_x = psi(f*(x), y) - psi(f(x), y),

    which reduces to the symmetric-noise bound when all eta_x are equal and
    is implied by the per-instance bound eta_x < (1 - k) d_x / (c2 - c1 - k d_x)
    holding at every x.
    """
    eta_vec = _eta_vector(task, eta_per_instance)
    (_, psi_y, _, clean, noisy, cset, nset, contained, delta, others, c1, c2, eta_bound, eta_prose) = _check(task, psi, eta_vec)
    k = task.k
    pre = True
    pointwise = 0
    for s in cset:
        d = psi_y[s][None, :] - psi_y[others]  # (|others|, m)
        agg = ((k - 1) * d + eta_vec[None, :] * (c2 - c1 - k * d)) @ task.marginals
        pre &= bool(np.all(agg < 0))
        with np.errstate(divide="ignore", invalid="ignore"):
            per_x = np.where(c2 - c1 - k * d > 0, (1 - k) * d / (c2 - c1 - k * d), np.nan)
        pointwise += int(np.sum(np.all(eta_vec[None, :] < per_x, axis=1)))
    notes = [f"per-instance bound holds at every x for {pointwise} of {len(others) * len(cset)} (f*, f) pairs"]
    if len(cset) > 1:
        notes.append(f"clean argmin has {len(cset)} tied hypotheses")
    zero = bool(np.all(eta_vec == 0))
    if not pre and not zero:
        notes.append("bound not satisfied")
    return RiskReport(clean, noisy, cset, nset, c1, c2, delta, -delta, eta_bound, eta_prose, pre, contained, _verdict(zero, pre, contained), notes)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import norm

from rtme.errors import ConfigError, InputError
from rtme.estimators import EstimatorSpec, Mode, batch_weights
from rtme.threshold import (
    SIGMA_MIN,
    AdaptConfig,
    adapt_parameter,
    perturb_sigma,
    select_small_loss,
    three_sigma_stats,
    three_sigma_threshold,
)

WORKED = 2 + 3 * math.sqrt(2 / 3)


def test_three_sigma_worked_example():
    st_ = three_sigma_stats([1, 2, 3, 10, 20])
    assert st_.median == 3 and st_.mean == 2
    assert st_.std == pytest.approx(math.sqrt(2 / 3), abs=1e-15)
    assert three_sigma_threshold([1, 2, 3, 10, 20]) == pytest.approx(WORKED, abs=1e-12)
    assert WORKED == pytest.approx(4.4495, abs=1e-4)


def test_three_sigma_constant():
    assert three_sigma_threshold([0.7] * 9) == pytest.approx(0.7, abs=1e-15)


def test_three_sigma_even_length_and_clamp():
    st_ = three_sigma_stats([0, 4])
    assert st_.median == 2 and st_.mean == 0 and st_.std == 0
    assert st_.sigma == SIGMA_MIN


def test_three_sigma_empty():
    with pytest.raises(InputError):
        three_sigma_threshold([])


losses_strategy = st.lists(st.floats(0.01, 50), min_size=1, max_size=60)


@given(losses_strategy, st.randoms(use_true_random=False))
def test_three_sigma_permutation_invariant(losses, rnd):
    shuffled = list(losses)
    rnd.shuffle(shuffled)
    assert three_sigma_threshold(losses) == pytest.approx(three_sigma_threshold(shuffled), rel=1e-12)
    st_ = three_sigma_stats(losses)
    assert st_.sigma >= st_.mean


@given(losses_strategy, st.floats(0.1, 100))
def test_three_sigma_scale_equivariant(losses, c):
    a = three_sigma_stats(losses)
    b = three_sigma_stats(np.array(losses) * c)
    assert b.mean + 3 * b.std == pytest.approx(c * (a.mean + 3 * a.std), rel=1e-9)


def test_select_small_loss_examples():
    np.testing.assert_array_equal(select_small_loss([0.5, 10], 2), [0])
    np.testing.assert_array_equal(select_small_loss([0.5, 10, 3], 10), [0, 1, 2])
    np.testing.assert_array_equal(select_small_loss([1, 2, 3, 10, 20], WORKED), [0, 1, 2])


@given(losses_strategy, st.floats(0.01, 60))
def test_selection_partitions_and_matches_zero_weights(losses, sigma):
    sel = select_small_loss(losses, sigma)
    rest = np.setdiff1d(np.arange(len(losses)), sel)
    assert len(sel) + len(rest) == len(losses)
    for kind in ("ce", "catoni", "logsum", "welsch+"):
        w = batch_weights(EstimatorSpec(kind), Mode.TRUNCATED, losses, sigma)
        assert np.all(w[rest] == 0) and np.all(w[sel] > 0)


def test_perturb_sigma():
    assert perturb_sigma(4.0, -0.2) == pytest.approx(3.2, abs=1e-15)
    assert perturb_sigma(4.0, 0) == 4.0
    assert perturb_sigma(4.4495, 0.2) == pytest.approx(5.3394, abs=1e-12)
    with pytest.raises(ConfigError):
        perturb_sigma(1.0, -1)


def test_adapt_fixed_mode_returns_one():
    cfg = AdaptConfig("fixed")
    assert adapt_parameter(EstimatorSpec("logsum", epsilon=3), [0.1, 0.5, 2.0], cfg) == 1.0


def _gaussian_quantiles(n=4000):
    return norm.ppf((np.arange(n) + 0.5) / n)


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 2.5, 3.0])
def test_adapt_recovers_planted_logsum_epsilon(p):
    # invert log(1 + L/p) = v for Gaussian-shaped v
    v = 0.7 + 0.15 * _gaussian_quantiles()
    losses = p * np.expm1(v)
    assert adapt_parameter(EstimatorSpec("logsum"), losses, AdaptConfig("gaussian")) == p


@pytest.mark.parametrize("p", [1.0, 1.5, 2.0, 2.5, 3.0])
def test_adapt_recovers_planted_welsch_alpha(p):
    # invert 1 - exp(-L/p^2) = v
    v = 0.5 + 0.11 * _gaussian_quantiles()
    losses = -(p**2) * np.log1p(-v)
    assert adapt_parameter(EstimatorSpec("welsch+"), losses, AdaptConfig("gaussian")) == p


def test_adapt_degenerate_keeps_current():
    cfg = AdaptConfig("gaussian")
    assert adapt_parameter(EstimatorSpec("logsum", epsilon=2.5), [0.4], cfg) == 2.5
    assert adapt_parameter(EstimatorSpec("welsch+", alpha=0.7), [0.4, 0.4, 0.4], cfg) == 0.7


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=2, max_size=50))
def test_adapt_output_in_grid_and_deterministic(losses):
    cfg = AdaptConfig("gaussian")
    spec = EstimatorSpec("welsch+", alpha=0.9)
    a = adapt_parameter(spec, losses, cfg)
    assert a == adapt_parameter(spec, losses, cfg)
    assert a in cfg.candidate_grid or a == 0.9


def test_adapt_rejects_non_adaptable():
    with pytest.raises(ConfigError):
        adapt_parameter(EstimatorSpec("catoni"), [0.1, 0.2], AdaptConfig("gaussian"))


def test_adapt_config_validation():
    with pytest.raises(ConfigError):
        AdaptConfig("median")
    with pytest.raises(ConfigError):
        AdaptConfig("gaussian", bin_count=1)

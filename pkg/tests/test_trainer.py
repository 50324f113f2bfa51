from dataclasses import replace

import numpy as np
import pytest

from conftest import mixture_split
from rtme.errors import ConfigError, NumericError
from rtme.estimators import EstimatorSpec, epoch_mode, weight_truncated
from rtme.netcore import MlpModel, init_mlp
from rtme.noise import LabeledDataset
from rtme.trainer import (
    METRICS_HEADER,
    TrainConfig,
    evaluate,
    memorization_metrics,
    read_metrics_csv,
    smallloss_keep_fraction,
    smallloss_weights,
    train,
    train_ce_baseline,
    train_rtme,
    train_smallloss_baseline,
)

FAST = TrainConfig(epochs=6, batch_size=64, lr_decay_epochs=(3, 5), hidden=(16,), seed=3)


def assert_same_record(a, b):
    # epsilon_or_alpha is NaN for estimators without a parameter
    assert a.to_csv() == b.to_csv()
    assert (a.best_epoch, a.best_val_acc, a.test_acc_at_best) == (b.best_epoch, b.best_val_acc, b.test_acc_at_best)


def assert_same_model(a: MlpModel, b: MlpModel):
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)


def test_ce_with_period_one_equals_ce_baseline(tiny_split):
    cfg = replace(FAST, estimator=EstimatorSpec("ce"), R=1)
    m1, r1 = train_rtme(cfg, tiny_split, allow_original_only=True)
    m2, r2 = train_ce_baseline(FAST, tiny_split)
    assert_same_model(m1, m2)
    assert [r.val_acc for r in r1.rows] == [r.val_acc for r in r2.rows]
    assert r1.column("test_acc").tolist() == r2.column("test_acc").tolist()


def test_period_one_needs_explicit_opt_in(tiny_split):
    with pytest.raises(ConfigError):
        train_rtme(replace(FAST, R=1), tiny_split)


def test_zero_perturbation_is_identity(tiny_split):
    _, a = train_rtme(FAST, tiny_split)
    _, b = train_rtme(replace(FAST, sigma_perturb=0.0), tiny_split)
    assert_same_record(a, b)


def test_deterministic_replay(tiny_split):
    cfg = replace(FAST, estimator=EstimatorSpec("logsum"))
    m1, a = train_rtme(cfg, tiny_split)
    m2, b = train_rtme(cfg, tiny_split)
    assert_same_record(a, b)
    assert_same_model(m1, m2)
    assert a.to_csv() == b.to_csv()


def test_record_shape_and_model_selection(tiny_split):
    model, rec = train_rtme(FAST, tiny_split)
    assert len(rec.rows) == FAST.epochs
    for name in ("train_acc", "clean_fit_fraction", "noisy_fit_fraction", "val_acc", "test_acc"):
        col = rec.column(name)
        assert np.all((col >= 0) & (col <= 1))
    val = rec.column("val_acc")
    assert rec.best_val_acc == val.max()
    assert rec.best_epoch == int(np.argmax(val))
    assert evaluate(model, tiny_split.val) == rec.best_val_acc
    assert evaluate(model, tiny_split.test, tiny_split.test.clean_labels) == rec.test_acc_at_best


def test_lr_schedule():
    cfg = TrainConfig(lr=0.01, lr_decay_epochs=(40, 80), lr_decay_factor=10)
    assert cfg.lr_at(0) == cfg.lr_at(39) == 0.01
    assert cfg.lr_at(40) == cfg.lr_at(79) == pytest.approx(1e-3, rel=1e-15)
    assert cfg.lr_at(80) == cfg.lr_at(99) == pytest.approx(1e-4, rel=1e-15)


def test_lr_logged_per_epoch(tiny_split):
    _, rec = train_rtme(FAST, tiny_split)
    assert rec.column("lr").tolist() == [FAST.lr_at(t) for t in range(FAST.epochs)]


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_decay_epochs=(40, 40))
    with pytest.raises(ConfigError):
        TrainConfig(sigma_perturb=-1.0)


@pytest.mark.parametrize("R", [2, 3])
def test_modes_marked_at_period(tiny_split, R):
    _, rec = train_rtme(replace(FAST, R=R), tiny_split)
    assert [r.mode for r in rec.rows] == [epoch_mode(t, R).value for t in range(FAST.epochs)]
    assert rec.rows[0].mode == "original"


def test_truncated_only_variant_marks(tiny_split):
    _, rec = train("truncated", FAST, tiny_split)
    assert [r.mode for r in rec.rows] == ["original"] + ["truncated"] * (FAST.epochs - 1)


@pytest.mark.parametrize("kind", ["catoni", "logsum", "welsch+"])
def test_truncated_batches_zero_weight_above_sigma(tiny_split, kind):
    cfg = replace(FAST, estimator=EstimatorSpec(kind), R=2)
    seen = {"truncated": 0, "zeroed": 0}

    def check(epoch, bi, losses, w, sigma):
        if epoch % 2 == 1:
            seen["truncated"] += 1
            above = losses > sigma
            seen["zeroed"] += int(above.sum())
            assert np.all(w[above] == 0)
            assert np.all(w[~above] > 0)
            np.testing.assert_array_equal(w, weight_truncated(cfg.estimator, losses, sigma))
        else:
            assert np.all(w > 0)

    train_rtme(cfg, tiny_split, on_batch=check)
    assert seen["truncated"] > 0 and seen["zeroed"] > 0


def test_logged_sigma_matches_epoch_start(tiny_split):
    sigmas = []
    _, rec = train_rtme(FAST, tiny_split, on_epoch_start=lambda t, m, losses, s: sigmas.append(s))
    assert rec.column("sigma").tolist() == sigmas


def test_smallloss_example():
    w = smallloss_weights(np.array([0.1, 0.2, 5.0, 9.0]), 0.5)
    assert set(np.flatnonzero(w)) == {0, 1}
    assert np.all(w[[0, 1]] == w[0])


def test_smallloss_keeps_at_least_one():
    assert np.count_nonzero(smallloss_weights(np.array([3.0, 1.0, 2.0]), 0.01)) == 1
    assert np.flatnonzero(smallloss_weights(np.array([3.0, 1.0, 2.0]), 0.01)).tolist() == [1]


def test_smallloss_schedule_plateau():
    assert smallloss_keep_fraction(0, 0.3, 10) == 1.0
    assert smallloss_keep_fraction(5, 0.3, 10) == pytest.approx(0.85)
    for t in (10, 11, 50):
        assert smallloss_keep_fraction(t, 0.3, 10) == 1 - 0.3


def test_smallloss_without_selection_is_ce(tiny_split):
    m1, a = train_smallloss_baseline(FAST, 0.0, 10, tiny_split)
    m2, b = train_ce_baseline(FAST, tiny_split)
    assert_same_model(m1, m2)
    assert a.column("val_acc").tolist() == b.column("val_acc").tolist()


def test_smallloss_validation(tiny_split):
    with pytest.raises(ConfigError):
        train_smallloss_baseline(FAST, 1.0, 10, tiny_split)
    with pytest.raises(ConfigError):
        train_smallloss_baseline(FAST, 0.2, 0, tiny_split)


def test_unknown_method(tiny_split):
    with pytest.raises(ConfigError):
        train("mae", FAST, tiny_split)


def _constant_model(k, cls, dim=2):
    w = np.zeros((dim, k))
    b = np.zeros(k)
    b[cls] = 1.0
    return MlpModel((dim, k), [w], [b], "relu")


def test_evaluate_constant_class_and_perfect():
    labels = np.repeat(np.arange(4), 25)
    x = np.eye(4)[labels]
    ds = LabeledDataset.clean(x, labels, 4)
    assert evaluate(_constant_model(4, 2, dim=4), ds) == 0.25
    perfect = MlpModel((4, 4), [np.eye(4)], [np.zeros(4)], "relu")
    assert evaluate(perfect, ds) == 1.0


def test_evaluate_ties_go_to_smallest_class():
    ds = LabeledDataset.clean(np.zeros((3, 2)), np.array([0, 1, 2]), 3)
    flat = MlpModel((2, 3), [np.zeros((2, 3))], [np.zeros(3)], "relu")
    assert evaluate(flat, ds) == pytest.approx(1 / 3)


def test_random_init_is_chance(tiny_split):
    accs = [evaluate(init_mlp((2, 32, 32, 4), np.random.default_rng(s)), tiny_split.test, tiny_split.test.clean_labels) for s in range(20)]
    assert abs(np.mean(accs) - 0.25) <= 0.05


def test_memorization_flags_and_definitions():
    x = np.eye(4)
    clean = np.array([0, 1, 2, 3])
    ds = LabeledDataset.clean(x, clean, 4)
    res = memorization_metrics(MlpModel((4, 4), [np.eye(4)], [np.zeros(4)], "relu"), ds)
    assert res.noisy_empty and res.noisy_fit == 0 and res.clean_fit == 1
    noisy = ds.with_noisy(np.array([0, 1, 3, 2]))
    # model fits the given (noisy) labels everywhere
    memorized = MlpModel((4, 4), [np.eye(4)[:, [0, 1, 3, 2]]], [np.zeros(4)], "relu")
    res = memorization_metrics(memorized, noisy)
    assert res.noisy_fit == 1.0 and res.clean_fit == 1.0 and not res.noisy_empty
    res = memorization_metrics(MlpModel((4, 4), [np.eye(4)], [np.zeros(4)], "relu"), noisy)
    assert res.noisy_fit == 0.0


def test_divergence_aborts_with_location(tiny_split):
    cfg = replace(FAST, lr=1e6, momentum=0.9, estimator=EstimatorSpec("ce"))
    with np.errstate(over="ignore", invalid="ignore"), pytest.raises(NumericError, match=r"epoch \d+"):
        train_ce_baseline(cfg, tiny_split)


def test_clean_ce_reaches_calibration_accuracy():
    split = mixture_split(n=2000, n_test=2000, tau=0.0, kind="none")
    _, rec = train_ce_baseline(TrainConfig(epochs=30, lr_decay_epochs=(12, 24)), split)
    assert rec.test_acc_at_best >= 0.97


@pytest.mark.slow
def test_heavy_noise_degrades_ce():
    cfg = TrainConfig(epochs=30, lr_decay_epochs=(12, 24))
    _, clean = train_ce_baseline(cfg, mixture_split(n=2000, n_test=2000, tau=0.0, kind="none"))
    _, noisy = train_ce_baseline(cfg, mixture_split(n=2000, n_test=2000, tau=0.5, kind="sym"))
    assert noisy.test_acc_at_best < clean.test_acc_at_best


def test_metrics_csv_round_trip(tiny_split):
    cfg = replace(FAST, estimator=EstimatorSpec("logsum"), adapt=replace(FAST.adapt, mode="gaussian"))
    _, rec = train_rtme(cfg, tiny_split)
    text = rec.to_csv()
    assert text.splitlines()[1] == ",".join(METRICS_HEADER)
    parsed = read_metrics_csv(text)
    assert len(parsed) == len(rec.rows)
    for row, got in zip(rec.rows, parsed):
        for name in METRICS_HEADER:
            assert got[name] == getattr(row, name)
    assert set(rec.column("epsilon_or_alpha")) <= set(cfg.adapt.candidate_grid) | {cfg.estimator.epsilon}


def test_metrics_csv_rejects_foreign_text():
    with pytest.raises(ValueError):
        read_metrics_csv("epoch,mode\n0,original\n")

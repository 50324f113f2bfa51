"""Training loops: regularly truncated M-estimators, plain CE, small-loss selection.

All three share one epoch loop.  At the start of every epoch a no-gradient
pass over the training set gives the loss snapshot from which the
truncation point (and optionally epsilon/alpha) is computed; both stay
frozen for the epoch while mini-batch weights use the live batch losses.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable

import numpy as np

from rtme.data import SplitDataset
from rtme.errors import ConfigError, NumericError
from rtme.estimators import EstimatorSpec, Mode, batch_weights, epoch_mode
from rtme.netcore import MlpModel, SgdMomentum, init_mlp, mlp_backward, mlp_forward, predict_logits, softmax_ce_per_example
from rtme.noise import LabeledDataset
from rtme.threshold import SIGMA_MIN, AdaptConfig, adapt_parameter, perturb_sigma, select_small_loss, three_sigma_threshold

METRICS_HEADER = (
    "epoch",
    "mode",
    "lr",
    "sigma",
    "epsilon_or_alpha",
    "kept_fraction",
    "train_acc",
    "clean_fit_fraction",
    "noisy_fit_fraction",
    "val_acc",
    "test_acc",
)
METRICS_VERSION = "# rtme-metrics v1"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-2
    lr_decay_epochs: tuple[int, ...] = (40, 80)
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-3
    estimator: EstimatorSpec = field(default_factory=EstimatorSpec)
    R: int | None = 2  # None: truncated every epoch after epoch 0
    adapt: AdaptConfig = field(default_factory=AdaptConfig)
    sigma_perturb: float = 0.0
    sigma_clamp_min: float = SIGMA_MIN
    hidden: tuple[int, ...] = (32, 32)
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be >= 1")
        decay = tuple(self.lr_decay_epochs)
        if any(b <= a for a, b in zip(decay, decay[1:])):
            raise ConfigError(f"lr decay epochs must be strictly increasing, got {decay}")
        if self.R is not None and self.R < 1:
            raise ConfigError(f"R must be >= 1, got {self.R}")
        if not self.sigma_perturb > -1:
            raise ConfigError(f"sigma_perturb must be > -1, got {self.sigma_perturb}")

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.lr_decay_epochs if epoch >= e)
        return self.lr / self.lr_decay_factor**drops

    def to_dict(self):
        d = asdict(self)
        d["lr_decay_epochs"] = list(self.lr_decay_epochs)
        d["hidden"] = list(self.hidden)
        d["adapt"]["candidate_grid"] = list(self.adapt.candidate_grid)
        return d


@dataclass
class EpochRow:
    epoch: int
    mode: str
    lr: float
    sigma: float
    epsilon_or_alpha: float
    kept_fraction: float
    train_acc: float
    clean_fit_fraction: float
    noisy_fit_fraction: float
    val_acc: float
    test_acc: float


@dataclass
class RunRecord:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = -1
    best_val_acc: float = -1.0
    test_acc_at_best: float = float("nan")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(METRICS_VERSION + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in self.rows:
            w.writerow([_fmt(getattr(r, name)) for name in METRICS_HEADER])
        return buf.getvalue()

    def summary(self) -> dict:
        last = self.rows[-1]
        return {
            "best_epoch": self.best_epoch,
            "best_val_acc": self.best_val_acc,
            "test_acc_at_best": self.test_acc_at_best,
            "final_test_acc": last.test_acc,
            "epochs": len(self.rows),
        }


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def read_metrics_csv(text: str) -> list[dict]:
    lines = text.splitlines()
    if not lines or lines[0] != METRICS_VERSION:
        raise ValueError("not an rtme metrics CSV")
    rows = list(csv.DictReader(lines[1:]))
    ints = {"epoch"}
    strs = {"mode"}
    return [{k: (int(v) if k in ints else v if k in strs else float(v)) for k, v in r.items()} for r in rows]


@dataclass
class MemorizationResult:
    clean_fit: float
    noisy_fit: float
    clean_empty: bool = False
    noisy_empty: bool = False


def predictions(model: MlpModel, features) -> np.ndarray:
    # argmax returns the first maximum, i.e. ties go to the smallest class
    return np.argmax(predict_logits(model, features), axis=1)


def evaluate(model: MlpModel, dataset: LabeledDataset, labels=None) -> float:
    """Accuracy against ``labels`` (default: the dataset's observed labels)."""
    if labels is None:
        labels = dataset.noisy_labels
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predictions(model, dataset.features) == labels))


def memorization_metrics(model: MlpModel, train_set: LabeledDataset, preds=None) -> MemorizationResult:
    """Fit to the given labels on the clean and the mislabeled partitions."""
    if preds is None:
        preds = predictions(model, train_set.features)
    mask = train_set.clean_mask
    hit = preds == train_set.noisy_labels
    clean_empty, noisy_empty = not mask.any(), mask.all()
    return MemorizationResult(
        0.0 if clean_empty else float(hit[mask].mean()),
        0.0 if noisy_empty else float(hit[~mask].mean()),
        bool(clean_empty),
        bool(noisy_empty),
    )


def snapshot_losses(model: MlpModel, dataset: LabeledDataset) -> np.ndarray:
    return softmax_ce_per_example(predict_logits(model, dataset.features), dataset.noisy_labels)


def smallloss_keep_fraction(epoch, tau, T_k) -> float:
    """1 - min(T / T_k * tau, tau)."""
    return 1.0 - min(epoch / T_k * tau, tau)


def smallloss_weights(losses, keep_fraction) -> np.ndarray:
    """Unit weight on the ceil(keep_fraction * B) smallest losses, 0 elsewhere.

    The weights are rescaled by B / kept so the batch mean becomes the mean
    over the kept examples.
    """
    b = len(losses)
    kept = max(1, min(b, math.ceil(keep_fraction * b - 1e-9)))
    idx = np.argsort(losses, kind="stable")[:kept]
    w = np.zeros(b)
    w[idx] = b / kept
    return w


# A weight rule maps (epoch, batch_losses, sigma, spec) -> per-example weights.
WeightRule = Callable[[int, np.ndarray, float, EstimatorSpec], np.ndarray]


def _rtme_rule(R):
    def rule(epoch, losses, sigma, spec):
        return batch_weights(spec, epoch_mode(epoch, R), losses, sigma)

    return rule


def _run(config: TrainConfig, split: SplitDataset, rule: WeightRule, mode_of, on_epoch_start=None, on_batch=None):
    train, val, test = split.train, split.val, split.test
    seeds = np.random.SeedSequence(config.seed).spawn(2)
    init_rng, shuffle_rng = (np.random.default_rng(s) for s in seeds)
    sizes = (train.dim, *config.hidden, train.k)
    model = init_mlp(sizes, init_rng, config.activation)
    opt = SgdMomentum.for_model(model, config.lr, config.momentum, config.weight_decay)
    spec = config.estimator
    record = RunRecord()
    best_model = model.copy()

    for epoch in range(config.epochs):
        opt.lr = config.lr_at(epoch)
        order = shuffle_rng.permutation(train.n)

        losses = snapshot_losses(model, train)
        if not np.all(np.isfinite(losses)):
            raise NumericError(f"non-finite training loss in snapshot at epoch {epoch}")
        sigma = three_sigma_threshold(losses, config.sigma_clamp_min)
        sigma = perturb_sigma(sigma, config.sigma_perturb)
        if spec.adaptable and config.adapt.mode == "gaussian":
            small = losses[select_small_loss(losses, sigma)]
            if small.size:
                spec = spec.with_param(adapt_parameter(spec, small, config.adapt, spec.param))
        if on_epoch_start is not None:
            on_epoch_start(epoch, model, losses, sigma)

        kept = 0.0
        for bi, start in enumerate(range(0, train.n, config.batch_size)):
            idx = order[start : start + config.batch_size]
            y = train.noisy_labels[idx]
            logits, cache = mlp_forward(model, train.features[idx])
            batch_losses = softmax_ce_per_example(logits, y)
            if not np.all(np.isfinite(batch_losses)):
                raise NumericError(f"non-finite loss at epoch {epoch}, batch {bi}")
            w = rule(epoch, batch_losses, sigma, spec)
            if on_batch is not None:
                on_batch(epoch, bi, batch_losses, w, sigma)
            kept += np.count_nonzero(w)
            try:
                opt.step(model, mlp_backward(model, cache, y, w))
            except NumericError as exc:
                raise NumericError(f"{exc} at epoch {epoch}, batch {bi}") from None

        preds = predictions(model, train.features)
        mem = memorization_metrics(model, train, preds)
        row = EpochRow(
            epoch=epoch,
            mode=mode_of(epoch).value,
            lr=opt.lr,
            sigma=float(sigma),
            epsilon_or_alpha=float(spec.param) if spec.param is not None else float("nan"),
            kept_fraction=kept / train.n,
            train_acc=float(np.mean(preds == train.noisy_labels)),
            clean_fit_fraction=mem.clean_fit,
            noisy_fit_fraction=mem.noisy_fit,
            val_acc=evaluate(model, val),
            test_acc=evaluate(model, test, test.clean_labels),
        )
        record.rows.append(row)
        if row.val_acc > record.best_val_acc:
            record.best_epoch, record.best_val_acc, record.test_acc_at_best = epoch, row.val_acc, row.test_acc
            best_model = model.copy()

    return best_model, record


def train_rtme(config: TrainConfig, split: SplitDataset, allow_original_only=False, **hooks):
    """Regularly truncated M-estimator training.

    ``R=1`` never truncates and is rejected unless ``allow_original_only`` is
    set (the original-estimator ablation).  ``R=None`` truncates every epoch
    after the first.
    """
    if config.R == 1 and not allow_original_only:
        raise ConfigError("R=1 never truncates; pass allow_original_only=True for that ablation")
    return _run(config, split, _rtme_rule(config.R), lambda t: epoch_mode(t, config.R), **hooks)


def train_ce_baseline(config: TrainConfig, split: SplitDataset, **hooks):
    config = replace(config, estimator=EstimatorSpec("ce"), R=1)
    return _run(config, split, _rtme_rule(1), lambda t: Mode.ORIGINAL, **hooks)


def train_smallloss_baseline(config: TrainConfig, tau, T_k, split: SplitDataset, **hooks):
    if not 0 <= tau < 1:
        raise ConfigError(f"tau must lie in [0, 1), got {tau}")
    if T_k < 1:
        raise ConfigError(f"T_k must be >= 1, got {T_k}")
    config = replace(config, estimator=EstimatorSpec("ce"))

    def rule(epoch, losses, sigma, spec):
        return smallloss_weights(losses, smallloss_keep_fraction(epoch, tau, T_k))

    return _run(config, split, rule, lambda t: Mode.ORIGINAL if t == 0 or tau == 0 else Mode.TRUNCATED, **hooks)


METHODS = ("rtme", "ce", "truncated", "smallloss")


def train(method: str, config: TrainConfig, split: SplitDataset, tau=0.0, T_k=10, **hooks):
    """Dispatch by method name; ``truncated`` is RTME with an infinite period."""
    if method == "rtme":
        return train_rtme(config, split, **hooks)
    if method == "ce":
        return train_ce_baseline(config, split, **hooks)
    if method == "truncated":
        return train_rtme(replace(config, R=None), split, **hooks)
    if method == "smallloss":
        return train_smallloss_baseline(config, tau, T_k, split, **hooks)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


def summary_json(record: RunRecord, extra: dict) -> str:
    return json.dumps({**record.summary(), **extra}, sort_keys=True, indent=2) + "\n"

"""Small dense MLP with manual backprop of a per-example weighted CE loss.

Everything is float64 numpy. Weights are stored as (fan_in, fan_out) so a
batch row vector maps through ``x @ W + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rtme.errors import ConfigError, InputError, NumericError

ACTIVATIONS = ("relu", "softsign")


@dataclass
class MlpModel:
    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "MlpModel":
        return MlpModel(
            tuple(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.activation,
        )

    def params(self):
        return [*self.weights, *self.biases]


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]  # input to each layer; inputs[0] is the batch
    preacts: list[np.ndarray]  # pre-activation of each hidden layer
    logits: np.ndarray


@dataclass
class GradientSet:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, model: MlpModel) -> "GradientSet":
        return cls([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])

    def params(self):
        return [*self.weights, *self.biases]


@dataclass
class SgdMomentum:
    """Optimizer state: one velocity buffer per parameter."""

    velocity: GradientSet
    lr: float = 1e-2
    momentum: float = 0.9
    weight_decay: float = 1e-3
    steps: int = field(default=0)

    @classmethod
    def for_model(cls, model, lr=1e-2, momentum=0.9, weight_decay=1e-3):
        return cls(GradientSet.zeros_like(model), lr, momentum, weight_decay)

    def step(self, model, grads):
        sgd_momentum_step(model, grads, self.velocity, self.lr, self.momentum, self.weight_decay)
        self.steps += 1


def init_mlp(layer_sizes, rng: np.random.Generator, activation="relu") -> MlpModel:
    """He-uniform weights, zero biases."""
    layer_sizes = tuple(int(s) for s in layer_sizes)
    if len(layer_sizes) < 2 or min(layer_sizes) < 1:
        raise ConfigError(f"layer_sizes must list at least input and output widths, got {layer_sizes}")
    if activation not in ACTIVATIONS:
        raise ConfigError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_sizes, weights, biases, activation)


def _act(z, kind):
    if kind == "relu":
        return np.maximum(z, 0.0)
    return z / (1.0 + np.abs(z))


def _act_grad(z, kind):
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    return 1.0 / (1.0 + np.abs(z)) ** 2


def mlp_forward(model: MlpModel, batch_x) -> tuple[np.ndarray, ForwardCache]:
    x = np.asarray(batch_x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.layer_sizes[0]:
        raise ConfigError(f"batch has shape {x.shape}, model expects (*, {model.layer_sizes[0]})")
    inputs, preacts = [], []
    a = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        inputs.append(a)
        z = a @ w + b
        if i == last:
            return z, ForwardCache(inputs, preacts, z)
        preacts.append(z)
        a = _act(z, model.activation)
    raise AssertionError("unreachable")


def predict_logits(model: MlpModel, x) -> np.ndarray:
    return mlp_forward(model, x)[0]


def _check_labels(labels, n, k):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise InputError(f"expected {n} labels, got shape {labels.shape}")
    if n and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    return labels.astype(np.int64)


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_ce_per_example(logits, labels) -> np.ndarray:
    """Per-row cross-entropy ``-log softmax(logits)[label]`` (never negative)."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = _check_labels(labels, logits.shape[0], logits.shape[1])
    losses = -log_softmax(logits)[np.arange(len(labels)), labels]
    # log-sum-exp of a row is >= its max, so tiny negatives are rounding only
    return np.maximum(losses, 0.0)


def mlp_backward(model: MlpModel, cache: ForwardCache, labels, per_example_weights) -> GradientSet:
    """Gradient of ``mean_i(w_i * CE_i)`` with the w_i held constant."""
    logits = cache.logits
    bsz, k = logits.shape
    labels = _check_labels(labels, bsz, k)
    w = np.asarray(per_example_weights, dtype=np.float64)
    if w.shape != (bsz,):
        raise AssertionError(f"weights shape {w.shape} does not match batch size {bsz}")
    if not np.all(np.isfinite(w)):
        raise InputError("per-example weights must be finite")

    delta = softmax(logits)
    delta[np.arange(bsz), labels] -= 1.0
    delta *= (w / bsz)[:, None]

    n_layers = len(model.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * _act_grad(cache.preacts[i - 1], model.activation)
    return GradientSet(gw, gb)


def sgd_momentum_step(model: MlpModel, grads: GradientSet, velocity: GradientSet, lr, momentum, weight_decay):
    """In-place update: ``v = m*v + (g + wd*theta); theta -= lr*v``."""
    if not lr > 0 or not 0 <= momentum < 1 or weight_decay < 0:
        raise ConfigError(f"bad optimizer settings lr={lr} momentum={momentum} weight_decay={weight_decay}")
    for g in grads.params():
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient")
    for theta, g, v in zip(model.params(), grads.params(), velocity.params()):
        v *= momentum
        v += g + weight_decay * theta
        theta -= lr * v
    return model

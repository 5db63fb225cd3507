"""From-scratch MLP binary classifier for trade-link presence.

ReLU hidden layers, a single sigmoid logit output, binary cross-entropy
with optional L2 on the weights, trained by plain mini-batch gradient
descent. Everything is deterministic under the config seed, and a frozen
parameter set is pure to evaluate, which the attribution module relies on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import InputError

PROB_CLAMP = 1e-12


@dataclass
class Layer:
    w: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


@dataclass
class MLPParams:
    layers: list[Layer]
    hidden_activation: str = "relu"

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[1]


@dataclass(frozen=True)
class TrainConfig:
    hidden_sizes: tuple[int, ...] = (64,)
    learning_rate: float = 0.1
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    l2_penalty: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(self.hidden_sizes))
        if any(h < 1 for h in self.hidden_sizes):
            raise InputError("hidden sizes must be positive")
        if self.learning_rate <= 0:
            raise InputError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be >= 1")
        if self.l2_penalty < 0:
            raise InputError("l2_penalty must be >= 0")


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int
    accuracy: float
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, tp: int, fp: int, tn: int, fn: int) -> "Metrics":
        total = tp + fp + tn + fn
        accuracy = (tp + tn) / total if total else 0.0
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
        return cls(tp, fp, tn, fn, accuracy, precision, recall, f1)

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
        }


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def init_params(input_dim: int, config: TrainConfig) -> MLPParams:
    """Glorot-uniform weights, zero biases, deterministic under the seed."""
    if input_dim < 1:
        raise InputError("input_dim must be >= 1")
    rng = np.random.default_rng(config.seed)
    sizes = [input_dim, *config.hidden_sizes, 1]
    layers = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        layers.append(
            Layer(w=rng.uniform(-bound, bound, size=(fan_out, fan_in)), b=np.zeros(fan_out))
        )
    return MLPParams(layers=layers)


def _forward_batch(params: MLPParams, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns (probabilities, per-layer activations including input)."""
    activations = [X]
    h = X
    for layer in params.layers[:-1]:
        h = np.maximum(0.0, h @ layer.w.T + layer.b)
        activations.append(h)
    logits = (h @ params.layers[-1].w.T + params.layers[-1].b).ravel()
    probs = np.clip(_sigmoid(logits), PROB_CLAMP, 1.0 - PROB_CLAMP)
    return probs, activations


def batch_forward(params: MLPParams, X: np.ndarray) -> np.ndarray:
    """Probabilities for a 2-d batch of inputs; pure, safe to call concurrently."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != params.input_dim:
        raise InputError(f"expected shape (n, {params.input_dim}), got {X.shape}")
    return _forward_batch(params, X)[0]


def forward(params: MLPParams, x: Sequence[float]) -> float:
    """Probability for one input vector."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_dim,):
        raise InputError(f"expected input length {params.input_dim}, got {x.shape}")
    return float(_forward_batch(params, x[None, :])[0][0])


def predictor(params: MLPParams) -> Callable[[np.ndarray], np.ndarray]:
    """Batch probability function over a frozen parameter set."""
    return lambda X: batch_forward(params, X)


def loss(params: MLPParams, batch: tuple[np.ndarray, np.ndarray], l2_penalty: float = 0.0) -> float:
    """Mean binary cross-entropy plus l2_penalty * ||weights||^2 / 2."""
    X, y = batch
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) == 0:
        raise InputError("empty batch")
    probs, _ = _forward_batch(params, X)
    bce = -np.mean(y * np.log(probs) + (1.0 - y) * np.log(1.0 - probs))
    penalty = 0.5 * l2_penalty * sum(float(np.sum(l.w**2)) for l in params.layers)
    return float(bce + penalty)


def grad(params: MLPParams, batch: tuple[np.ndarray, np.ndarray], l2_penalty: float = 0.0) -> list[Layer]:
    """Exact backprop gradient of ``loss``, one Layer of partials per layer."""
    X, y = batch
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(X)
    if n == 0:
        raise InputError("empty batch")
    probs, activations = _forward_batch(params, X)
    # d(mean BCE)/d(logit) = (p - y)/n
    delta = ((probs - y) / n)[:, None]
    grads: list[Layer] = [None] * len(params.layers)  # type: ignore[list-item]
    for t in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[t]
        a_prev = activations[t]
        gw = delta.T @ a_prev + l2_penalty * layer.w
        gb = delta.sum(axis=0)
        grads[t] = Layer(w=gw, b=gb)
        if t > 0:
            delta = (delta @ layer.w) * (activations[t] > 0)
    return grads


def train(matrix, config: TrainConfig) -> MLPParams:
    """Mini-batch gradient descent on binary targets; bit-deterministic
    for a fixed (data, config) pair."""
    from .dataset import EncodedMatrix

    if not isinstance(matrix, EncodedMatrix):
        raise InputError("train expects an EncodedMatrix")
    y = matrix.target
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise InputError("training targets must be binary")
    if matrix.n_rows < config.batch_size:
        raise InputError("batch_size exceeds the number of rows")
    X = matrix.to_dense()
    params = init_params(matrix.n_cols, config)
    rng = np.random.default_rng(config.seed + 1)  # decoupled from init draws
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(matrix.n_rows)
        for start in range(0, matrix.n_rows, config.batch_size):
            idx = order[start : start + config.batch_size]
            grads = grad(params, (X[idx], y[idx]), config.l2_penalty)
            for layer, g in zip(params.layers, grads):
                layer.w -= lr * g.w
                layer.b -= lr * g.b
    return params


def evaluate(params: MLPParams, matrix) -> Metrics:
    """Confusion-matrix metrics at threshold 0.5 (ties classify as 1)."""
    y = matrix.target
    if not set(np.unique(y)) <= {0.0, 1.0}:
        raise InputError("evaluation targets must be binary")
    probs = batch_forward(params, matrix.to_dense())
    pred = (probs >= 0.5).astype(float)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    tn = int(np.sum((pred == 0) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    return Metrics.from_counts(tp, fp, tn, fn)


def save_params(params: MLPParams, path: str | Path) -> None:
    doc = {
        "layers": [{"w": l.w.tolist(), "b": l.b.tolist()} for l in params.layers],
        "hidden_activation": params.hidden_activation,
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_params(path: str | Path) -> MLPParams:
    path = Path(path)
    if not path.exists():
        raise InputError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        layers = [
            Layer(w=np.array(l["w"], dtype=float), b=np.array(l["b"], dtype=float))
            for l in doc["layers"]
        ]
        return MLPParams(layers=layers, hidden_activation=str(doc["hidden_activation"]))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise InputError(f"corrupt model file {path}: {exc}") from exc

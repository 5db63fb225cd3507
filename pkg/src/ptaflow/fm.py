"""2-way factorization machine regressor.

The predictor is w0 + sum_i w_i x_i + sum_{i<j} <v_i, v_j> x_i x_j. Two
evaluation routes are kept deliberately: ``predict_naive`` runs the
explicit double loop over pairs, ``predict_fast`` uses the algebraic
rewrite 0.5 * sum_l [(sum_i v_il x_i)^2 - sum_i v_il^2 x_i^2] whose cost
is linear in the number of nonzero features. Training is per-row SGD on
squared loss with analytic gradients.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError

MODEL_FILE_VERSION = 1

# sparse input: (indices, values) with values aligned to indices
SparseRow = tuple[np.ndarray, np.ndarray]


@dataclass
class FMModel:
    w0: float
    w: np.ndarray  # (d,)
    V: np.ndarray  # (d, k)

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=float)
        self.V = np.asarray(self.V, dtype=float)
        if self.V.ndim != 2 or self.V.shape[0] != self.w.shape[0]:
            raise InputError("V must be d x k with d matching w")
        if self.V.shape[1] < 1:
            raise InputError("latent dimension k must be >= 1")
        if not (math.isfinite(self.w0) and np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.V))):
            raise InputError("model entries must be finite")

    @property
    def d(self) -> int:
        return self.w.shape[0]

    @property
    def k(self) -> int:
        return self.V.shape[1]


@dataclass(frozen=True)
class FMTrainConfig:
    k: int = 8
    learning_rate: float = 0.01
    epochs: int = 20
    seed: int = 0
    init_sigma: float = 0.01
    l2_w: float = 0.0
    l2_v: float = 0.0

    def __post_init__(self):
        if self.k < 1 or self.epochs < 1:
            raise InputError("k and epochs must be >= 1")
        if self.learning_rate <= 0 or self.init_sigma <= 0:
            raise InputError("learning_rate and init_sigma must be > 0")
        if self.l2_w < 0 or self.l2_v < 0:
            raise InputError("l2 penalties must be >= 0")


@dataclass
class InteractionMatrix:
    """All pairwise latent dot products <v_i, v_j>.

    The diagonal is emitted for completeness but carries no modeled
    effect: self-pairs never enter the predictor.
    """

    matrix: np.ndarray  # (d, d), exactly symmetric
    feature_ids: list[str]

    def to_csv(self, path: str | Path) -> None:
        lines = [",".join(self.feature_ids)]
        for row in self.matrix:
            lines.append(",".join(repr(float(v)) for v in row))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _split_sparse(x) -> SparseRow:
    """Accept a dense vector or an (indices, values) pair."""
    if isinstance(x, tuple):
        idx, vals = x
        return np.asarray(idx, dtype=int), np.asarray(vals, dtype=float)
    x = np.asarray(x, dtype=float)
    idx = np.flatnonzero(x)
    return idx, x[idx]


def _check_dim(model: FMModel, x) -> None:
    if not isinstance(x, tuple):
        if np.asarray(x).shape != (model.d,):
            raise InputError(f"input length {np.asarray(x).shape} does not match d={model.d}")


def predict_naive(model: FMModel, x) -> float:
    """Quadratic-cost evaluation with the explicit pair double loop."""
    _check_dim(model, x)
    if isinstance(x, tuple):
        dense = np.zeros(model.d)
        idx, vals = _split_sparse(x)
        dense[idx] = vals
        x = dense
    x = np.asarray(x, dtype=float)
    total = model.w0
    for i in range(model.d):
        total += model.w[i] * x[i]
    for i in range(model.d):
        for j in range(i + 1, model.d):
            total += float(np.dot(model.V[i], model.V[j])) * x[i] * x[j]
    return float(total)


def predict_fast(model: FMModel, x) -> float:
    """Linear-time evaluation; touches only the nonzero features.

    ``x`` may be a dense vector or a sparse (indices, values) pair; the
    sparse form skips the nonzero scan entirely.
    """
    _check_dim(model, x)
    idx, vals = _split_sparse(x)
    linear = model.w0 + float(np.dot(model.w[idx], vals))
    if idx.size == 0:
        return linear
    Vnz = model.V[idx]
    s = vals @ Vnz  # (k,)
    q = (vals**2) @ (Vnz**2)  # (k,)
    return linear + 0.5 * float(np.sum(s * s - q))


@dataclass
class FMGradient:
    w0: float
    w: np.ndarray
    V: np.ndarray


def gradient(model: FMModel, x, y: float, l2_w: float = 0.0, l2_v: float = 0.0) -> FMGradient:
    """Gradient of 0.5*(yhat - y)^2 plus L2 terms, matching FMModel's shape.

    d yhat / d v_il = x_i * (sum_j v_jl x_j) - v_il x_i^2; the residual
    (yhat - y) scales all model-term components.
    """
    _check_dim(model, x)
    idx, vals = _split_sparse(x)
    resid = predict_fast(model, (idx, vals)) - y
    gw0 = resid
    gw = l2_w * model.w
    gV = l2_v * model.V
    if idx.size:
        gw[idx] += resid * vals
        Vnz = model.V[idx]
        s = vals @ Vnz  # (k,)
        gV[idx] += resid * (vals[:, None] * s[None, :] - Vnz * (vals**2)[:, None])
    return FMGradient(w0=gw0, w=gw, V=gV)


def train(matrix, config: FMTrainConfig) -> FMModel:
    """Row-wise SGD over shuffled epochs, deterministic under the seed."""
    from .dataset import EncodedMatrix

    if not isinstance(matrix, EncodedMatrix):
        raise InputError("train expects an EncodedMatrix")
    if matrix.n_rows < 1:
        raise InputError("training matrix is empty")
    if not np.all(np.isfinite(matrix.target)):
        raise InputError("non-finite target value")
    rng = np.random.default_rng(config.seed)
    d = matrix.n_cols
    model = FMModel(
        w0=0.0,
        w=np.zeros(d),
        V=rng.normal(scale=config.init_sigma, size=(d, config.k)),
    )
    sparse_rows = [
        (np.array(idx, dtype=int), np.ones(len(idx))) for idx in matrix.rows
    ]
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(matrix.n_rows)
        for i in order:
            idx, vals = sparse_rows[i]
            resid = predict_fast(model, (idx, vals)) - matrix.target[i]
            model.w0 -= lr * resid
            if config.l2_w:
                model.w -= lr * config.l2_w * model.w
            if config.l2_v:
                model.V -= lr * config.l2_v * model.V
            if idx.size:
                model.w[idx] -= lr * resid * vals
                Vnz = model.V[idx]
                s = vals @ Vnz
                model.V[idx] = Vnz - lr * resid * (
                    vals[:, None] * s[None, :] - Vnz * (vals**2)[:, None]
                )
    if not (np.all(np.isfinite(model.w)) and np.all(np.isfinite(model.V)) and math.isfinite(model.w0)):
        raise InputError("training diverged to non-finite parameters; lower the learning rate")
    return model


def rmse(model: FMModel, matrix) -> float:
    if matrix.n_rows < 1:
        raise InputError("empty matrix")
    errs = np.array(
        [
            predict_fast(model, (np.array(idx, dtype=int), np.ones(len(idx)))) - y
            for idx, y in zip(matrix.rows, matrix.target)
        ]
    )
    return float(np.sqrt(np.mean(errs**2)))


def interaction_matrix(model: FMModel, feature_ids: list[str] | None = None) -> InteractionMatrix:
    """Pairwise effect matrix M[i][j] = <v_i, v_j>, exactly symmetric."""
    M = model.V @ model.V.T
    M = np.triu(M) + np.triu(M, 1).T  # mirror the upper triangle bit-exactly
    if feature_ids is None:
        feature_ids = [f"F{j}" for j in range(model.d)]
    if len(feature_ids) != model.d:
        raise InputError("feature id list length differs from d")
    return InteractionMatrix(matrix=M, feature_ids=list(feature_ids))


def interaction_from_csv(path: str | Path) -> InteractionMatrix:
    """Inverse of InteractionMatrix.to_csv (floats round-trip exactly)."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"heatmap file not found: {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines:
        raise InputError(f"{path}: empty heatmap file")
    feature_ids = lines[0].split(",")
    d = len(feature_ids)
    if len(lines) != d + 1:
        raise InputError(f"{path}: expected {d} data rows, got {len(lines) - 1}")
    try:
        matrix = np.array([[float(v) for v in line.split(",")] for line in lines[1:]])
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from exc
    if matrix.shape != (d, d):
        raise InputError(f"{path}: ragged heatmap rows")
    return InteractionMatrix(matrix=matrix, feature_ids=feature_ids)


def save(model: FMModel, path: str | Path) -> None:
    doc = {
        "version": MODEL_FILE_VERSION,
        "w0": model.w0,
        "w": model.w.tolist(),
        "V": model.V.tolist(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load(path: str | Path) -> FMModel:
    path = Path(path)
    if not path.exists():
        raise InputError(f"model file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise InputError(f"corrupt model file {path}: missing version")
    if doc["version"] != MODEL_FILE_VERSION:
        raise InputError(
            f"model file version {doc['version']} unsupported (expected {MODEL_FILE_VERSION})"
        )
    try:
        return FMModel(w0=float(doc["w0"]), w=np.array(doc["w"], dtype=float), V=np.array(doc["V"], dtype=float))
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"corrupt model file {path}: {exc}") from exc

"""Shapley attributions for prediction functions over binary features.

The characteristic function is interventional: v(S) is the mean model
output over composites that take the coordinates in S from the explained
instance and the rest from a background population, minus the mean output
over the background itself. Attributions come from exact subset
enumeration (weighted marginal contributions over all coalitions) or from
Monte Carlo averaging over sampled feature orderings; the two estimators
agree algebraically, which the test suite exploits.

Model contract: ``model`` maps a 2-d float array of shape (m, d) to a
1-d array of m outputs and must be pure; attribution of distinct rows may
then be evaluated in any order with identical results.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import InputError

EXACT_MAX_FEATURES = 25
EXHAUSTIVE_PERM_MAX_FEATURES = 10


@dataclass
class CharacteristicContext:
    """One explanation problem: a model, an instance, and a background."""

    model: Callable[[np.ndarray], np.ndarray]
    x: np.ndarray
    background: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        self.background = np.asarray(self.background, dtype=float)
        if self.x.ndim != 1:
            raise InputError("instance x must be a 1-d vector")
        if self.background.ndim != 2 or self.background.shape[0] == 0:
            raise InputError("background must be a nonempty 2-d matrix")
        if self.background.shape[1] != self.x.shape[0]:
            raise InputError("background width must match the instance length")

    @property
    def d(self) -> int:
        return self.x.shape[0]


@dataclass
class Attribution:
    """Per-feature payoffs for one instance plus estimator metadata."""

    values: np.ndarray
    base_value: float
    estimator: str  # "exact" or "permutation"
    n_permutations: int
    std_errors: np.ndarray
    instance: np.ndarray


@dataclass
class GlobalImportance:
    """Mean absolute attribution per feature, sorted descending."""

    feature_ids: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if len(self.feature_ids) != len(self.values):
            raise InputError("feature ids and values differ in length")
        if np.any(self.values < 0):
            raise InputError("importance values must be nonnegative")
        if np.any(np.diff(self.values) > 0):
            raise InputError("importance values must be non-increasing")

    def to_json_list(self) -> list[dict]:
        return [
            {"feature": fid, "importance": float(val)}
            for fid, val in zip(self.feature_ids, self.values)
        ]


@dataclass(frozen=True)
class EstimatorConfig:
    method: str = "exact"
    n_permutations: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("exact", "permutation"):
            raise InputError(f"unknown estimator {self.method!r}")
        if self.method == "permutation" and self.n_permutations < 2:
            raise InputError("n_permutations must be >= 2")


class _ValueCache:
    """Memoized v(S) with subsets keyed by bitmask; counts model evaluations."""

    def __init__(self, ctx: CharacteristicContext):
        self.ctx = ctx
        self.base = float(np.mean(ctx.model(ctx.background)))
        self.full = float(np.mean(ctx.model(ctx.x[None, :]))) - self.base
        self.cache: dict[int, float] = {0: 0.0, (1 << ctx.d) - 1: self.full}
        self.evaluations = 2  # empty and full sets are resolved analytically

    def composites(self, mask: int) -> np.ndarray:
        bits = _mask_to_bits(mask, self.ctx.d)
        return np.where(bits, self.ctx.x, self.ctx.background)

    def value(self, mask: int) -> float:
        hit = self.cache.get(mask)
        if hit is not None:
            return hit
        out = float(np.mean(self.ctx.model(self.composites(mask)))) - self.base
        self.cache[mask] = out
        self.evaluations += 1
        return out

    def value_many(self, masks: Sequence[int]) -> list[float]:
        """Evaluate several subsets with one stacked model call."""
        todo = [m for m in masks if m not in self.cache]
        if todo:
            m_rows = self.ctx.background.shape[0]
            stacked = np.concatenate([self.composites(m) for m in todo])
            outputs = np.asarray(self.ctx.model(stacked), dtype=float)
            for pos, mask in enumerate(todo):
                chunk = outputs[pos * m_rows : (pos + 1) * m_rows]
                self.cache[mask] = float(np.mean(chunk)) - self.base
                self.evaluations += 1
        return [self.cache[m] for m in masks]


def _mask_to_bits(mask: int, d: int) -> np.ndarray:
    return np.array([(mask >> j) & 1 for j in range(d)], dtype=bool)


def characteristic_value(ctx: CharacteristicContext, S: Iterable[int]) -> float:
    """v(S): mean model output with the features in S pinned to the
    instance and the rest swept over the background, relative to the
    unconditional background mean. v of the empty set is exactly 0."""
    S = set(S)
    if any(i < 0 or i >= ctx.d for i in S):
        raise InputError(f"feature index out of range [0,{ctx.d})")
    if not S:
        return 0.0
    mask = sum(1 << i for i in S)
    cache = _ValueCache(ctx)
    return cache.value(mask)


def exact_shapley(ctx: CharacteristicContext) -> Attribution:
    """Exact attribution by full subset enumeration.

    Each coalition value is evaluated once and memoized (at most 2^d model
    sweeps). Refuses d > 25; use perm_shapley beyond that.
    """
    d = ctx.d
    if d > EXACT_MAX_FEATURES:
        raise InputError(
            f"exact enumeration is limited to d <= {EXACT_MAX_FEATURES} features "
            f"(got {d}); use perm_shapley instead"
        )
    cache = _ValueCache(ctx)
    # weight for a coalition of size s, per feature: 1 / (d * C(d-1, s))
    weights = [1.0 / (d * math.comb(d - 1, s)) for s in range(d)]
    phi = np.zeros(d)
    for mask in range(1 << d):
        s = mask.bit_count()
        v_s = cache.value(mask)
        for i in range(d):
            bit = 1 << i
            if mask & bit:
                continue
            phi[i] += weights[s] * (cache.value(mask | bit) - v_s)
    return Attribution(
        values=phi,
        base_value=cache.base,
        estimator="exact",
        n_permutations=0,
        std_errors=np.zeros(d),
        instance=ctx.x.copy(),
    )


def perm_shapley(
    ctx: CharacteristicContext,
    n_permutations: int,
    seed: int,
    exhaustive: bool = False,
) -> Attribution:
    """Monte Carlo attribution over sampled feature orderings.

    Each ordering contributes one marginal per feature; estimates are the
    per-feature means and std_errors the sample standard deviations over
    orderings divided by sqrt(#orderings). With ``exhaustive`` every one of
    the d! orderings is visited (seed and n_permutations are ignored),
    which reproduces the exact attribution up to float rounding.
    """
    d = ctx.d
    if exhaustive:
        if d > EXHAUSTIVE_PERM_MAX_FEATURES:
            raise InputError(
                f"exhaustive ordering enumeration is limited to d <= "
                f"{EXHAUSTIVE_PERM_MAX_FEATURES} (got {d})"
            )
        orders: Iterable[Sequence[int]] = itertools.permutations(range(d))
        n_orders = math.factorial(d)
    else:
        if n_permutations < 2:
            raise InputError("n_permutations must be >= 2")
        rng = np.random.default_rng(seed)
        orders = [rng.permutation(d) for _ in range(n_permutations)]
        n_orders = n_permutations

    cache = _ValueCache(ctx)
    samples = np.empty((n_orders, d))
    for row, order in enumerate(orders):
        masks = []
        mask = 0
        for i in order:
            mask |= 1 << int(i)
            masks.append(mask)
        values = cache.value_many(masks)
        prev = 0.0
        for i, v_cur in zip(order, values):
            samples[row, int(i)] = v_cur - prev
            prev = v_cur
    phi = samples.mean(axis=0)
    if n_orders > 1:
        std_errors = samples.std(axis=0, ddof=1) / math.sqrt(n_orders)
    else:
        std_errors = np.zeros(d)
    return Attribution(
        values=phi,
        base_value=cache.base,
        estimator="permutation",
        n_permutations=n_orders,
        std_errors=std_errors,
        instance=ctx.x.copy(),
    )


def attribute(
    model: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    background: np.ndarray,
    config: EstimatorConfig,
) -> Attribution:
    """Attribution of one instance under the configured estimator."""
    ctx = CharacteristicContext(model=model, x=x, background=background)
    if config.method == "exact":
        return exact_shapley(ctx)
    return perm_shapley(ctx, config.n_permutations, config.seed)


def global_importance(
    model: Callable[[np.ndarray], np.ndarray],
    eval_rows: np.ndarray,
    background: np.ndarray,
    config: EstimatorConfig,
    feature_ids: Sequence[str] | None = None,
) -> tuple[GlobalImportance, list[Attribution]]:
    """Mean absolute attribution per feature across an evaluation set.

    Returns the ranking (descending, ties broken by ascending feature
    index) together with the per-row attributions that produced it.
    """
    eval_rows = np.asarray(eval_rows, dtype=float)
    if eval_rows.ndim != 2 or eval_rows.shape[0] == 0:
        raise InputError("eval_rows must be a nonempty 2-d matrix")
    d = eval_rows.shape[1]
    if feature_ids is None:
        feature_ids = [f"F{j}" for j in range(d)]
    if len(feature_ids) != d:
        raise InputError("feature id list length differs from eval row width")
    attributions = [
        attribute(model, eval_rows[i], background, config)
        for i in range(eval_rows.shape[0])
    ]
    mean_abs = np.mean(np.abs(np.stack([a.values for a in attributions])), axis=0)
    order = sorted(range(d), key=lambda j: (-mean_abs[j], j))
    ranked = GlobalImportance(
        feature_ids=[feature_ids[j] for j in order],
        values=mean_abs[order],
    )
    return ranked, attributions


def top_k(importance: GlobalImportance, k: int) -> list[tuple[str, float]]:
    """First k entries of the descending importance order."""
    d = len(importance.feature_ids)
    if not 1 <= k <= d:
        raise InputError(f"k must be in [1, {d}], got {k}")
    return [
        (importance.feature_ids[j], float(importance.values[j])) for j in range(k)
    ]


def export_summary(
    attributions: Sequence[Attribution],
    feature_ids: Sequence[str],
    path: str | Path,
) -> None:
    """Write per-row, per-feature attributions as CSV.

    Columns feature_id, row_index, feature_value, shap_value carry enough
    to rebuild a beeswarm-style summary externally.
    """
    if not attributions:
        raise InputError("no attributions to export")
    d = len(feature_ids)
    for a in attributions:
        if len(a.values) != d or len(a.instance) != d:
            raise InputError("attribution width differs from feature id list")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature_id", "row_index", "feature_value", "shap_value"])
        for row_index, a in enumerate(attributions):
            for j, fid in enumerate(feature_ids):
                writer.writerow([fid, row_index, repr(float(a.instance[j])), repr(float(a.values[j]))])


def load_importance_csv(path: str | Path) -> GlobalImportance:
    """Read a feature-importance CSV (columns feature_id and importance;
    extra columns such as descriptions are ignored) into ranked form."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"importance file not found: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"feature_id", "importance"} <= set(reader.fieldnames):
            raise InputError(f"{path}: header must include feature_id and importance")
        pairs = []
        for lineno, row in enumerate(reader, start=2):
            try:
                pairs.append((row["feature_id"], float(row["importance"])))
            except (TypeError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    if not pairs:
        raise InputError(f"{path}: no data rows")
    order = sorted(range(len(pairs)), key=lambda i: (-pairs[i][1], i))
    return GlobalImportance(
        feature_ids=[pairs[i][0] for i in order],
        values=np.array([pairs[i][1] for i in order]),
    )


def reference_provision_importance() -> GlobalImportance:
    """Provision-importance ranking shipped with the package, from the
    original full-scale study of trade-agreement provisions."""
    source = resources.files("ptaflow").joinpath("data/provision_importance.csv")
    with resources.as_file(source) as path:
        return load_importance_csv(path)

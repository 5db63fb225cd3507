"""Reference gravity-model estimators at desk scale.

Three routes for comparison against the two-stage pipeline: log-linear
gravity by OLS, Poisson pseudo maximum likelihood with dummy-encoded
fixed effects (keeping zero flows, PPML's defining advantage), and an
L1-penalized PPML that shrinks provision coefficients to exact zeros by
proximal gradient. Fixed effects carry no explicit normalization; fits
are compared on mu, which is identified.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import EncodedMatrix, Panel
from .errors import ComputationError, ConvergenceError, InputError

FE_PREFIXES = ("EXPYR:", "IMPYR:", "PAIR:")


@dataclass(frozen=True)
class GravityObs:
    gdp_origin: float
    gdp_destination: float
    distance: float
    flow: float

    def __post_init__(self):
        if self.gdp_origin <= 0 or self.gdp_destination <= 0 or self.distance <= 0:
            raise InputError("gdp_origin, gdp_destination and distance must be > 0")
        if self.flow < 0:
            raise InputError("flow must be >= 0")


@dataclass
class PPMLModel:
    """Coefficients of a converged Poisson pseudo-likelihood fit.

    ``coef`` maps every design column name to its value; provision and
    fixed-effect columns are tracked separately so the provision betas and
    the three fixed-effect families can be read out by name. Coefficients
    are identified only up to shifts between fixed-effect families: always
    compare fits on predicted mu.
    """

    coef: dict[str, float]
    provision_names: list[str]
    fe_names: list[str]
    iterations: int = 0

    @property
    def beta(self) -> dict[str, float]:
        return {name: self.coef[name] for name in self.provision_names}

    def _fe_family(self, prefix: str) -> dict[tuple, float]:
        out = {}
        for name in self.fe_names:
            if name.startswith(prefix):
                parts = name[len(prefix):].split(":")
                if prefix == "PAIR:":
                    key = (parts[0], parts[1])
                else:
                    key = (parts[0], int(parts[1]))
                out[key] = self.coef[name]
        return out

    @property
    def fe_exporter_year(self) -> dict[tuple[str, int], float]:
        return self._fe_family("EXPYR:")

    @property
    def fe_importer_year(self) -> dict[tuple[str, int], float]:
        return self._fe_family("IMPYR:")

    @property
    def fe_pair(self) -> dict[tuple[str, str], float]:
        return self._fe_family("PAIR:")

    def to_json_dict(self) -> dict:
        doc = {
            "beta": {name: self.coef[name] for name in self.provision_names},
            "fe_exporter_year": {f"{c}|{y}": v for (c, y), v in self.fe_exporter_year.items()},
            "fe_importer_year": {f"{c}|{y}": v for (c, y), v in self.fe_importer_year.items()},
            "fe_pair": {f"{a}|{b}": v for (a, b), v in self.fe_pair.items()},
        }
        other = {
            name: self.coef[name]
            for name in self.fe_names
            if not name.startswith(FE_PREFIXES)
        }
        if other:
            doc["fe_other"] = other
        return doc


@dataclass(frozen=True)
class LassoConfig:
    lam: float = 0.0
    penalty_loadings: tuple[float, ...] | None = None  # default all ones
    max_iters: int = 5000
    tolerance: float = 1e-8

    def __post_init__(self):
        if self.lam < 0:
            raise InputError("lambda must be >= 0")
        if self.penalty_loadings is not None:
            object.__setattr__(self, "penalty_loadings", tuple(self.penalty_loadings))
            if any(p < 0 for p in self.penalty_loadings):
                raise InputError("penalty loadings must be >= 0")
        if self.max_iters < 1 or self.tolerance <= 0:
            raise InputError("max_iters must be >= 1 and tolerance > 0")


def load_gravity_csv(path: str | Path) -> list[GravityObs]:
    """Parse header ``gdp_origin,gdp_destination,distance,flow``."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"gravity file not found: {path}")
    expected = ["gdp_origin", "gdp_destination", "distance", "flow"]
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise InputError(f"{path}: expected header {','.join(expected)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            try:
                records.append(GravityObs(*(float(v) for v in row)))
            except (ValueError, InputError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return records


def fit_loglinear_gravity(observations: Sequence[GravityObs]) -> tuple[float, float, float, float]:
    """OLS of ln FLOW on [1, ln GDP_o, ln GDP_d, -ln DIST].

    Returns (ln alpha, beta1, beta2, beta3); beta3 > 0 means flow falls
    with distance. All flows must be strictly positive.
    """
    if len(observations) < 4:
        raise InputError("need at least 4 observations")
    if any(o.flow <= 0 for o in observations):
        raise InputError("log-linear gravity requires strictly positive flows")
    X = np.array(
        [
            [1.0, math.log(o.gdp_origin), math.log(o.gdp_destination), -math.log(o.distance)]
            for o in observations
        ]
    )
    y = np.array([math.log(o.flow) for o in observations])
    if np.linalg.matrix_rank(X) < 4:
        raise ComputationError("rank-deficient gravity design (collinear covariates)")
    gram = X.T @ X + 1e-10 * np.eye(4)
    coef = np.linalg.solve(gram, X.T @ y)
    return tuple(float(c) for c in coef)  # type: ignore[return-value]


def encode_threeway(panel: Panel, provision_subset: Sequence[str] | None = None) -> EncodedMatrix:
    """Design for the multiplicative gravity fit: provision columns plus
    exporter-year, importer-year and pair dummies; target is the raw flow."""
    if len(panel) == 0:
        raise InputError("empty panel")
    if provision_subset is None:
        provision_subset = list(panel.provision_ids)
    id_to_pos = {pid: i for i, pid in enumerate(panel.provision_ids)}
    missing = [pid for pid in provision_subset if pid not in id_to_pos]
    if missing:
        raise InputError(f"provision ids not in panel: {missing}")
    columns = list(provision_subset)
    col_of: dict[str, int] = {}
    for name in sorted({f"EXPYR:{r.exporter}:{r.year}" for r in panel}):
        col_of[name] = len(columns)
        columns.append(name)
    for name in sorted({f"IMPYR:{r.importer}:{r.year}" for r in panel}):
        col_of[name] = len(columns)
        columns.append(name)
    for name in sorted({f"PAIR:{r.exporter}:{r.importer}" for r in panel}):
        col_of[name] = len(columns)
        columns.append(name)
    subset_pos = [id_to_pos[pid] for pid in provision_subset]
    rows = []
    target = np.empty(len(panel))
    for i, r in enumerate(panel):
        idx = [j for j, pos in enumerate(subset_pos) if r.provisions[pos] == 1]
        idx.append(col_of[f"EXPYR:{r.exporter}:{r.year}"])
        idx.append(col_of[f"IMPYR:{r.importer}:{r.year}"])
        idx.append(col_of[f"PAIR:{r.exporter}:{r.importer}"])
        rows.append(tuple(sorted(idx)))
        target[i] = r.flow
    return EncodedMatrix(columns=columns, rows=rows, target=target)


def _poisson_objective(X: np.ndarray, y: np.ndarray, coef: np.ndarray) -> float:
    """(1/n) sum(mu - y*eta); y*log(mu) with y=0 contributes 0."""
    eta = X @ coef
    return float(np.mean(np.exp(eta) - y * eta))


def _check_targets(matrix: EncodedMatrix) -> np.ndarray:
    y = matrix.target
    if np.any(y < 0):
        raise InputError("PPML targets must be nonnegative")
    if not np.any(y > 0):
        raise InputError("PPML requires at least one positive target")
    return y


def _fit_penalized_poisson(
    X: np.ndarray,
    y: np.ndarray,
    thresholds: np.ndarray,
    max_iters: int,
    tolerance: float,
) -> tuple[np.ndarray, int]:
    """Proximal gradient descent on the mean Poisson deviance part.

    ``thresholds`` holds the per-coordinate L1 weight (lambda*phi_l/n for
    penalized coordinates, 0 elsewhere); soft-thresholding is exact, so
    saturated coordinates land on literal zeros. Step sizes start from a
    Barzilai-Borwein estimate and back off until the quadratic upper bound
    holds. Convergence is declared on the proximal-gradient residual.
    """
    n, p = X.shape
    coef = np.zeros(p)
    obj = _poisson_objective(X, y, coef)
    step = 1.0
    prev_coef = None
    prev_grad = None
    iterations = 0
    for iterations in range(1, max_iters + 1):
        mu = np.exp(X @ coef + 0.0)
        grad = (X.T @ (mu - y)) / n
        if prev_grad is not None:
            dc = coef - prev_coef
            dg = grad - prev_grad
            denom = float(dg @ dg)
            if denom > 0:
                bb = float(dc @ dg) / denom
                if math.isfinite(bb) and bb > 0:
                    step = min(max(bb, 1e-12), 1e6)
        prev_coef = coef.copy()
        prev_grad = grad.copy()
        # backtracking on the smooth part's quadratic model
        for _ in range(80):
            cand = coef - step * grad
            nz = thresholds > 0
            cand[nz] = np.sign(cand[nz]) * np.maximum(np.abs(cand[nz]) - step * thresholds[nz], 0.0)
            delta = cand - coef
            cand_obj = _poisson_objective(X, y, cand)
            bound = obj + float(grad @ delta) + float(delta @ delta) / (2.0 * step)
            if math.isfinite(cand_obj) and cand_obj <= bound + 1e-12 * max(1.0, abs(obj)):
                break
            step *= 0.5
        else:
            raise ConvergenceError("line search failed to find a usable step")
        residual = np.max(np.abs(delta)) / step
        coef = cand
        obj = cand_obj
        if residual <= tolerance:
            return coef, iterations
    grad_norm = float(np.max(np.abs((X.T @ (np.exp(X @ coef) - y)))))
    raise ConvergenceError(
        f"PPML did not converge in {max_iters} iterations "
        f"(gradient max-norm {grad_norm:.3e})",
        gradient_norm=grad_norm,
    )


def _base(matrix: EncodedMatrix, fe_columns: Sequence[str]) -> tuple[np.ndarray, np.ndarray, list[str], list[str]]:
    y = _check_targets(matrix)
    fe_set = set(fe_columns)
    unknown = fe_set - set(matrix.columns)
    if unknown:
        raise InputError(f"fe_columns not in design: {sorted(unknown)}")
    provisions = [c for c in matrix.columns if c not in fe_set]
    fes = [c for c in matrix.columns if c in fe_set]
    return matrix.to_dense(), y, provisions, fes


def ppml_fit(
    matrix: EncodedMatrix,
    fe_columns: Sequence[str],
    max_iters: int = 5000,
    tolerance: float = 1e-8,
) -> PPMLModel:
    """Maximize the Poisson pseudo-likelihood sum(y*ln mu - mu).

    Fixed effects are ordinary dummy coefficients; zero-flow rows stay in.
    Raises ConvergenceError (with the gradient norm) when max_iters is hit.
    """
    X, y, provisions, fes = _base(matrix, fe_columns)
    thresholds = np.zeros(matrix.n_cols)
    coef, iterations = _fit_penalized_poisson(X, y, thresholds, max_iters, tolerance)
    return PPMLModel(
        coef={name: float(c) for name, c in zip(matrix.columns, coef)},
        provision_names=provisions,
        fe_names=fes,
        iterations=iterations,
    )


def lasso_ppml_fit(
    matrix: EncodedMatrix,
    fe_columns: Sequence[str],
    config: LassoConfig,
) -> tuple[PPMLModel, list[str]]:
    """PPML with an L1 penalty (1/n) sum_l lambda*phi_l*|beta_l| on the
    provision coefficients only. Returns the fit and the active set, i.e.
    provisions with nonzero coefficients."""
    X, y, provisions, fes = _base(matrix, fe_columns)
    loadings = config.penalty_loadings
    if loadings is None:
        loadings = tuple(1.0 for _ in provisions)
    if len(loadings) != len(provisions):
        raise InputError(
            f"expected {len(provisions)} penalty loadings, got {len(loadings)}"
        )
    n = matrix.n_rows
    name_to_col = {name: j for j, name in enumerate(matrix.columns)}
    thresholds = np.zeros(matrix.n_cols)
    for name, phi in zip(provisions, loadings):
        thresholds[name_to_col[name]] = config.lam * phi / n
    coef, iterations = _fit_penalized_poisson(X, y, thresholds, config.max_iters, config.tolerance)
    model = PPMLModel(
        coef={name: float(c) for name, c in zip(matrix.columns, coef)},
        provision_names=provisions,
        fe_names=fes,
        iterations=iterations,
    )
    active = [name for name in provisions if model.coef[name] != 0.0]
    return model, active


def fe_column_names(matrix: EncodedMatrix) -> list[str]:
    """Columns carrying fixed-effect dummies, by naming convention."""
    return [c for c in matrix.columns if c.startswith(FE_PREFIXES)]


def ppml_predict(model: PPMLModel, matrix: EncodedMatrix) -> np.ndarray:
    """mu per row: exp of the summed coefficients of the set columns."""
    unknown = [c for c in matrix.columns if c not in model.coef]
    if unknown:
        raise InputError(f"unknown covariate levels at prediction time: {unknown}")
    coef = np.array([model.coef[c] for c in matrix.columns])
    eta = np.array([sum(coef[j] for j in idx) for idx in matrix.rows])
    return np.exp(eta)

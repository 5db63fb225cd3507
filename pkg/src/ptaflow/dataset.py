"""Panel construction and encoding for provision-level trade-flow analysis.

Ingests two CSV inputs (bilateral flows and agreement provision vectors),
joins them into a zero-filled panel keyed by (exporter, importer, year),
encodes sparse binary design matrices with optional one-hot fixed-effect
dummies, and provides deterministic train/test splitting plus synthetic
generators with known ground truth for verification.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InputError

FLOWS_HEADER = ["exporter", "importer", "year", "flow"]
PROVISION_KEY_FIELDS = ["exporter", "importer", "year"]


@dataclass(frozen=True)
class TradeFlowRecord:
    """One observed export flow: exporter -> importer in a given year, USD."""

    exporter: str
    importer: str
    year: int
    flow: float

    def __post_init__(self):
        if not self.exporter or not self.importer:
            raise InputError("country codes must be nonempty")
        if self.exporter == self.importer:
            raise InputError(f"self-loop flow {self.exporter}->{self.importer}")
        if not math.isfinite(self.flow) or self.flow < 0:
            raise InputError(f"flow must be finite and nonnegative, got {self.flow}")


@dataclass(frozen=True)
class ProvisionRecord:
    """Binary provision vector for one (exporter, importer, year) agreement."""

    exporter: str
    importer: str
    year: int
    provisions: tuple[int, ...]
    provision_ids: tuple[str, ...]

    def __post_init__(self):
        if not self.exporter or not self.importer:
            raise InputError("country codes must be nonempty")
        if self.exporter == self.importer:
            raise InputError(f"self-loop agreement {self.exporter}->{self.importer}")
        if len(self.provisions) != len(self.provision_ids):
            raise InputError("provision vector and id list lengths differ")
        if len(set(self.provision_ids)) != len(self.provision_ids):
            raise InputError("duplicate provision id")
        if any(v not in (0, 1) for v in self.provisions):
            raise InputError("provision entries must be 0 or 1")


@dataclass(frozen=True)
class PanelRow:
    """One exporter-importer-year observation, the unit of all modeling."""

    exporter: str
    importer: str
    year: int
    provisions: tuple[int, ...]
    flow: float
    flow_present: int

    def __post_init__(self):
        if self.flow_present != (1 if self.flow > 0 else 0):
            raise InputError("flow_present must be 1 iff flow > 0")


@dataclass(frozen=True)
class Panel:
    """A list of PanelRow plus the shared provision id order."""

    rows: tuple[PanelRow, ...]
    provision_ids: tuple[str, ...]

    def __post_init__(self):
        d = len(self.provision_ids)
        for row in self.rows:
            if len(row.provisions) != d:
                raise InputError("panel row provision length differs from id list")

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self):
        return iter(self.rows)

    def nonzero(self) -> "Panel":
        return Panel(
            rows=tuple(r for r in self.rows if r.flow_present == 1),
            provision_ids=self.provision_ids,
        )


@dataclass
class EncodedMatrix:
    """Row-major sparse binary design matrix with named columns.

    ``rows[i]`` holds the sorted column indices that are 1 in row i; absent
    means 0. ``columns`` maps position -> feature name (a bijection).
    """

    columns: list[str]
    rows: list[tuple[int, ...]]
    target: np.ndarray

    def __post_init__(self):
        self.target = np.asarray(self.target, dtype=float)
        if len(set(self.columns)) != len(self.columns):
            raise InputError("duplicate column name in encoded matrix")
        if len(self.rows) != len(self.target):
            raise InputError("row count and target length differ")
        n_cols = len(self.columns)
        for idx in self.rows:
            if any(j < 0 or j >= n_cols for j in idx):
                raise InputError("column index out of range")

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_cols(self) -> int:
        return len(self.columns)

    def to_dense(self) -> np.ndarray:
        dense = np.zeros((self.n_rows, self.n_cols))
        for i, idx in enumerate(self.rows):
            dense[i, list(idx)] = 1.0
        return dense

    def subset_rows(self, indices: Sequence[int]) -> "EncodedMatrix":
        return EncodedMatrix(
            columns=list(self.columns),
            rows=[self.rows[i] for i in indices],
            target=self.target[list(indices)],
        )

    def to_json_dict(self) -> dict:
        return {
            "n_rows": self.n_rows,
            "n_cols": self.n_cols,
            "columns": list(self.columns),
            "rows": [list(idx) for idx in self.rows],
            "target": [float(v) for v in self.target],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "EncodedMatrix":
        try:
            matrix = cls(
                columns=list(doc["columns"]),
                rows=[tuple(int(j) for j in idx) for idx in doc["rows"]],
                target=np.array(doc["target"], dtype=float),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed encoded-matrix document: {exc}") from exc
        if matrix.n_rows != doc.get("n_rows") or matrix.n_cols != doc.get("n_cols"):
            raise InputError("encoded-matrix document counts do not match contents")
        return matrix


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float
    seed: int
    stratify: bool = True

    def __post_init__(self):
        if not 0 < self.test_fraction < 1:
            raise InputError(f"test_fraction must be in (0,1), got {self.test_fraction}")


def load_flows_csv(path: str | Path) -> list[TradeFlowRecord]:
    """Parse a flow CSV with header ``exporter,importer,year,flow``.

    Raises InputError with the offending line number for malformed rows,
    negative flows, or self-loops.
    """
    path = Path(path)
    if not path.exists():
        raise InputError(f"flows file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FLOWS_HEADER:
            raise InputError(f"{path}: expected header {','.join(FLOWS_HEADER)!r}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise InputError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
            exporter, importer, year_s, flow_s = (f.strip() for f in row)
            try:
                year = int(year_s)
                flow = float(flow_s)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            try:
                records.append(TradeFlowRecord(exporter, importer, year, flow))
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return records


def load_provisions_csv(path: str | Path) -> list[ProvisionRecord]:
    """Parse a provision CSV; identifiers come from the header, order kept."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"provisions file not found: {path}")
    records = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != PROVISION_KEY_FIELDS:
            raise InputError(
                f"{path}: header must start with {','.join(PROVISION_KEY_FIELDS)!r}"
            )
        provision_ids = tuple(h.strip() for h in header[3:])
        if not provision_ids:
            raise InputError(f"{path}: no provision columns in header")
        if len(set(provision_ids)) != len(provision_ids):
            raise InputError(f"{path}: duplicate provision id in header")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 + len(provision_ids):
                raise InputError(
                    f"{path}:{lineno}: expected {3 + len(provision_ids)} fields, got {len(row)}"
                )
            exporter, importer, year_s = (f.strip() for f in row[:3])
            try:
                year = int(year_s)
            except ValueError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
            cells = []
            for pos, cell in enumerate(row[3:]):
                value = cell.strip()
                if value not in ("0", "1"):
                    raise InputError(
                        f"{path}:{lineno}: provision {provision_ids[pos]!r} must be 0 or 1, "
                        f"got {value!r}"
                    )
                cells.append(int(value))
            try:
                records.append(
                    ProvisionRecord(exporter, importer, year, tuple(cells), provision_ids)
                )
            except InputError as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from exc
    return records


def build_panel(
    flows: Sequence[TradeFlowRecord], provisions: Sequence[ProvisionRecord]
) -> Panel:
    """Join flows onto provision keys; missing flows become zeros.

    Flow records whose (exporter, importer, year) key has no provision
    record are dropped. Duplicate keys in either input are a hard error.
    """
    if not flows or not provisions:
        raise InputError("build_panel requires nonempty flows and provisions")
    provision_ids = provisions[0].provision_ids
    flow_by_key: dict[tuple[str, str, int], float] = {}
    for rec in flows:
        key = (rec.exporter, rec.importer, rec.year)
        if key in flow_by_key:
            raise InputError(f"duplicate flow key {key}")
        flow_by_key[key] = rec.flow
    seen: set[tuple[str, str, int]] = set()
    rows = []
    for rec in provisions:
        if rec.provision_ids != provision_ids:
            raise InputError("provision records disagree on the id list")
        key = (rec.exporter, rec.importer, rec.year)
        if key in seen:
            raise InputError(f"duplicate provision key {key}")
        seen.add(key)
        flow = flow_by_key.get(key, 0.0)
        rows.append(
            PanelRow(
                exporter=rec.exporter,
                importer=rec.importer,
                year=rec.year,
                provisions=rec.provisions,
                flow=flow,
                flow_present=1 if flow > 0 else 0,
            )
        )
    return Panel(rows=tuple(rows), provision_ids=provision_ids)


def encode_covariates(
    panel: Panel,
    provision_subset: Sequence[str],
    include_fixed_effects: bool,
    target: str,
) -> EncodedMatrix:
    """Build the binary design matrix for a panel.

    Columns are the selected provisions (in the given order), then one-hot
    exporter, importer and year dummies when ``include_fixed_effects``.
    ``target`` selects ``"binary"`` (flow_present) or ``"log_flow"``
    (natural log; every row must have flow > 0).
    """
    if target not in ("binary", "log_flow"):
        raise InputError(f"unknown target {target!r}")
    if len(panel) == 0:
        raise InputError("empty panel")
    id_to_pos = {pid: i for i, pid in enumerate(panel.provision_ids)}
    missing = [pid for pid in provision_subset if pid not in id_to_pos]
    if missing:
        raise InputError(f"provision ids not in panel: {missing}")

    columns = list(provision_subset)
    exp_col: dict[str, int] = {}
    imp_col: dict[str, int] = {}
    year_col: dict[int, int] = {}
    if include_fixed_effects:
        for code in sorted({r.exporter for r in panel}):
            exp_col[code] = len(columns)
            columns.append(f"EXP:{code}")
        for code in sorted({r.importer for r in panel}):
            imp_col[code] = len(columns)
            columns.append(f"IMP:{code}")
        for year in sorted({r.year for r in panel}):
            year_col[year] = len(columns)
            columns.append(f"YEAR:{year}")

    subset_pos = [id_to_pos[pid] for pid in provision_subset]
    rows = []
    targets = np.empty(len(panel))
    for i, row in enumerate(panel):
        idx = [j for j, pos in enumerate(subset_pos) if row.provisions[pos] == 1]
        if include_fixed_effects:
            idx.append(exp_col[row.exporter])
            idx.append(imp_col[row.importer])
            idx.append(year_col[row.year])
        rows.append(tuple(sorted(idx)))
        if target == "binary":
            targets[i] = float(row.flow_present)
        else:
            if row.flow <= 0:
                raise InputError(
                    f"log_flow target requires positive flows; "
                    f"({row.exporter},{row.importer},{row.year}) has flow {row.flow}"
                )
            targets[i] = math.log(row.flow)
    return EncodedMatrix(columns=columns, rows=rows, target=targets)


def split(matrix: EncodedMatrix, spec: SplitSpec) -> tuple[EncodedMatrix, EncodedMatrix]:
    """Deterministic train/test partition; stratified splits keep class
    proportions within one row of the overall rate."""
    n = matrix.n_rows
    if n < 2:
        raise InputError("cannot split fewer than 2 rows")
    rng = np.random.default_rng(spec.seed)
    if spec.stratify:
        values = set(np.unique(matrix.target))
        if not values <= {0.0, 1.0}:
            raise InputError("stratified split requires a binary target")
        test_idx: list[int] = []
        for cls in (0.0, 1.0):
            cls_idx = np.flatnonzero(matrix.target == cls)
            if cls_idx.size == 0:
                continue
            n_test = int(round(spec.test_fraction * cls_idx.size))
            perm = rng.permutation(cls_idx.size)
            test_idx.extend(int(cls_idx[p]) for p in perm[:n_test])
    else:
        n_test = int(round(spec.test_fraction * n))
        perm = rng.permutation(n)
        test_idx = [int(p) for p in perm[:n_test]]
    test_set = set(test_idx)
    if not test_set or len(test_set) == n:
        raise InputError("test_fraction yields an empty train or test part")
    train_order = [i for i in range(n) if i not in test_set]
    test_order = sorted(test_set)
    return matrix.subset_rows(train_order), matrix.subset_rows(test_order)


def synth_fm_data(n: int, d: int, k: int, noise_sigma: float, seed: int):
    """Draw a planted factorization-machine dataset.

    Returns (EncodedMatrix, generating FMModel). With noise_sigma = 0 the
    targets equal the generating model's predictions exactly.
    """
    from .fm import FMModel, predict_naive

    if n < 1 or d < 1 or k < 1:
        raise InputError("n, d, k must all be >= 1")
    if noise_sigma < 0:
        raise InputError("noise_sigma must be >= 0")
    rng = np.random.default_rng(seed)
    model = FMModel(
        w0=float(rng.normal()),
        w=rng.normal(size=d),
        V=rng.normal(size=(d, k)) / math.sqrt(k),
    )
    X = (rng.random((n, d)) < 0.5).astype(float)
    # the naive pair sum, so noiseless targets match it bit-for-bit
    y = np.array([predict_naive(model, X[i]) for i in range(n)])
    if noise_sigma > 0:
        y = y + rng.normal(scale=noise_sigma, size=n)
    matrix = EncodedMatrix(
        columns=[f"F{j}" for j in range(d)],
        rows=[tuple(int(j) for j in np.flatnonzero(X[i])) for i in range(n)],
        target=y,
    )
    return matrix, model


def synth_presence_data(n: int, d: int, n_active: int, seed: int):
    """Binary labels driven by a planted logistic rule over n_active features.

    Active features carry coefficients with magnitudes in [4, 8] and random
    signs (strong enough that a good classifier clears 90% accuracy); the
    intercept centers the positive rate near one half. Returns
    (EncodedMatrix, sorted active index list).
    """
    if not 1 <= n_active <= d:
        raise InputError("need 1 <= n_active <= d")
    if n < 1:
        raise InputError("n must be >= 1")
    rng = np.random.default_rng(seed)
    active = np.sort(rng.choice(d, size=n_active, replace=False))
    coef = np.zeros(d)
    signs = rng.choice([-1.0, 1.0], size=n_active)
    coef[active] = signs * (4.0 + 4.0 * rng.random(n_active))
    # features are Bernoulli(0.5), so -sum(c)/2 centers the mean logit at 0
    bias = -0.5 * coef.sum()
    X = (rng.random((n, d)) < 0.5).astype(float)
    logits = X @ coef + bias
    probs = 1.0 / (1.0 + np.exp(-logits))
    y = (rng.random(n) < probs).astype(float)
    matrix = EncodedMatrix(
        columns=[f"F{j}" for j in range(d)],
        rows=[tuple(int(j) for j in np.flatnonzero(X[i])) for i in range(n)],
        target=y,
    )
    return matrix, [int(j) for j in active]


def save_panel(panel: Panel, path: str | Path) -> None:
    """Serialize a panel to JSON (provisions stored as set-index lists)."""
    doc = {
        "provision_ids": list(panel.provision_ids),
        "rows": [
            {
                "exporter": r.exporter,
                "importer": r.importer,
                "year": r.year,
                "set_provisions": [i for i, v in enumerate(r.provisions) if v],
                "flow": r.flow,
            }
            for r in panel
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")


def load_panel(path: str | Path) -> Panel:
    path = Path(path)
    if not path.exists():
        raise InputError(f"panel file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
        provision_ids = tuple(str(p) for p in doc["provision_ids"])
        d = len(provision_ids)
        rows = []
        for row in doc["rows"]:
            vec = [0] * d
            for i in row["set_provisions"]:
                vec[int(i)] = 1
            flow = float(row["flow"])
            rows.append(
                PanelRow(
                    exporter=str(row["exporter"]),
                    importer=str(row["importer"]),
                    year=int(row["year"]),
                    provisions=tuple(vec),
                    flow=flow,
                    flow_present=1 if flow > 0 else 0,
                )
            )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise InputError(f"malformed panel file {path}: {exc}") from exc
    return Panel(rows=tuple(rows), provision_ids=provision_ids)

"""Shared planted-data builders for the test suite."""

from __future__ import annotations

import math

import numpy as np

from ptaflow import fm
from ptaflow.dataset import EncodedMatrix, Panel, PanelRow


def matrix_to_panel(matrix: EncodedMatrix, seed: int = 0) -> Panel:
    """Wrap a synthetic binary-target matrix as a panel.

    Exporter/importer/year keys are synthetic and unique per row; the flow
    is the binary target (1.0 or 0.0), so flow_present reproduces it.
    """
    rng = np.random.default_rng(seed)
    rows = []
    d = matrix.n_cols
    for i, idx in enumerate(matrix.rows):
        vec = [0] * d
        for j in idx:
            vec[j] = 1
        flow = float(matrix.target[i])
        rows.append(
            PanelRow(
                exporter=f"E{i:05d}",
                importer=f"I{i % 7:02d}",
                year=2000 + (i % 5),
                provisions=tuple(vec),
                flow=flow,
                flow_present=1 if flow > 0 else 0,
            )
        )
    return Panel(rows=tuple(rows), provision_ids=tuple(matrix.columns))


def planted_fm_panel(
    seed: int,
    n_exp: int = 16,
    n_imp: int = 16,
    n_years: int = 6,
    d: int = 20,
    pair: tuple[int, int] = (2, 7),
    strength: float = 1.2,
    sigma: float = 0.3,
) -> tuple[Panel, fm.FMModel, tuple[int, int], float]:
    """Panel whose log flows come from a planted factorization machine.

    All flows are positive. The latent rows of the two ``pair`` provisions
    share a common direction, planting one strong positive interaction;
    every other latent row is near zero.
    """
    rng = np.random.default_rng(seed)
    pids = tuple(f"P{j:02d}" for j in range(d))
    n_cols = d + n_exp + n_imp + n_years
    w = np.concatenate([rng.normal(0, 0.3, d), rng.normal(0, 0.2, n_cols - d)])
    V = rng.normal(0, 0.03, (n_cols, 2))
    shared = rng.normal(0, 1.0, 2)
    shared *= math.sqrt(strength) / np.linalg.norm(shared)
    a, b = pair
    V[a] = shared
    V[b] = shared
    model = fm.FMModel(w0=1.0, w=w, V=V)
    rows = []
    for e_i in range(n_exp):
        for i_i in range(n_imp):
            for y_i in range(n_years):
                prov = (rng.random(d) < 0.4).astype(int)
                x = np.zeros(n_cols)
                x[:d] = prov
                x[d + e_i] = 1.0
                x[d + n_exp + i_i] = 1.0
                x[d + n_exp + n_imp + y_i] = 1.0
                log_flow = fm.predict_fast(model, x) + rng.normal(0, sigma)
                rows.append(
                    PanelRow(
                        exporter=f"E{e_i:02d}",
                        importer=f"I{i_i:02d}",
                        year=2000 + y_i,
                        provisions=tuple(int(v) for v in prov),
                        flow=float(np.exp(log_flow)),
                        flow_present=1,
                    )
                )
    return Panel(rows=tuple(rows), provision_ids=pids), model, pair, sigma


def simulated_gravity_panel(
    seed: int,
    n_exp: int = 10,
    n_imp: int = 10,
    n_years: int = 20,
    d: int = 8,
    base: float = 3.0,
    fe_sigma: float = 0.1,
    beta: np.ndarray | None = None,
) -> tuple[Panel, np.ndarray]:
    """Poisson draws from the multiplicative three-way gravity form."""
    rng = np.random.default_rng(seed)
    pids = tuple(f"P{j}" for j in range(d))
    if beta is None:
        beta = rng.uniform(-0.5, 0.5, d)
    alpha = {(e, y): rng.normal(0, fe_sigma) for e in range(n_exp) for y in range(n_years)}
    gamma = {(i, y): rng.normal(0, fe_sigma) for i in range(n_imp) for y in range(n_years)}
    delta = {(e, i): rng.normal(0, fe_sigma) for e in range(n_exp) for i in range(n_imp)}
    rows = []
    for e in range(n_exp):
        for i in range(n_imp):
            for y in range(n_years):
                prov = (rng.random(d) < 0.5).astype(int)
                eta = prov @ beta + alpha[(e, y)] + gamma[(i, y)] + delta[(e, i)] + base
                flow = float(rng.poisson(np.exp(eta)))
                rows.append(
                    PanelRow(
                        exporter=f"E{e:02d}",
                        importer=f"I{i:02d}",
                        year=2000 + y,
                        provisions=tuple(int(v) for v in prov),
                        flow=flow,
                        flow_present=1 if flow > 0 else 0,
                    )
                )
    return Panel(rows=tuple(rows), provision_ids=pids), np.asarray(beta)


def sparse_gravity_panel(seed: int, d: int = 10, n_true: int = 3) -> tuple[Panel, list[str]]:
    """Gravity panel where only n_true provisions carry nonzero effects."""
    rng = np.random.default_rng(seed)
    beta = np.zeros(d)
    true_idx = rng.choice(d, n_true, replace=False)
    beta[true_idx] = rng.choice([-1, 1], n_true) * rng.uniform(0.4, 0.8, n_true)
    panel, _ = simulated_gravity_panel(
        seed + 1000, n_exp=8, n_imp=8, n_years=8, d=d, base=2.5, beta=beta
    )
    return panel, sorted(f"P{j}" for j in true_idx)


def write_fixture_csvs(dir_path, seed: int = 11, d: int = 10, n_exp: int = 12, n_imp: int = 12, n_years: int = 4):
    """Small flow/provision CSV pair with zero-fill and orphan-flow cases.

    Returns (flows_path, provisions_path). Roughly 30% of provision keys
    lack a flow record, and a handful of flow records lack provisions.
    """
    rng = np.random.default_rng(seed)
    pids = [f"CP {j:02d}" for j in range(d)]
    coef = rng.normal(0, 0.6, d)
    flows_lines = ["exporter,importer,year,flow"]
    prov_lines = ["exporter,importer,year," + ",".join(pids)]
    for e in range(n_exp):
        for i in range(n_imp):
            for y in range(n_years):
                exporter, importer, year = f"X{e:02d}", f"M{i:02d}", 2000 + y
                prov = (rng.random(d) < 0.45).astype(int)
                prov_lines.append(f"{exporter},{importer},{year}," + ",".join(str(v) for v in prov))
                if rng.random() < 0.7:
                    flow = float(np.exp(2.0 + prov @ coef + rng.normal(0, 0.5)))
                    flows_lines.append(f"{exporter},{importer},{year},{flow!r}")
    # flow records with no matching provision key: dropped at panel build
    for extra in range(5):
        flows_lines.append(f"Z{extra:02d},M00,1999,{float(extra + 1)!r}")
    flows_path = dir_path / "flows.csv"
    provisions_path = dir_path / "provisions.csv"
    flows_path.write_text("\n".join(flows_lines) + "\n", encoding="utf-8")
    provisions_path.write_text("\n".join(prov_lines) + "\n", encoding="utf-8")
    return flows_path, provisions_path

"""Command-line surface.

One JSON config document drives the pipeline commands; flags carry only
paths and subcommand selection. Every random draw is seeded from the
config, so identical inputs give identical output bytes. Exit codes:
0 success, 1 computation failure, 2 input or config error.
"""

from __future__ import annotations

import functools
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import dataset, fm, gravity_baseline, nnclassifier, pipeline, shapley
from .dataset import SplitSpec
from .errors import InputError, PtaflowError
from .fm import FMTrainConfig
from .nnclassifier import TrainConfig
from .pipeline import PipelineConfig, ShapConfig


@dataclass(frozen=True)
class InputPaths:
    flows_csv: str | None = None
    provisions_csv: str | None = None
    panel_json: str | None = None


@dataclass(frozen=True)
class BaselineConfig:
    gravity_csv: str | None = None
    lam: float = 0.0
    penalty_loadings: tuple[float, ...] | None = None
    max_iters: int = 5000
    tolerance: float = 1e-8


@dataclass(frozen=True)
class CliConfig:
    inputs: InputPaths = field(default_factory=InputPaths)
    output_dir: str = "ptaflow-out"
    k: int = 20
    split: SplitSpec = field(default_factory=lambda: SplitSpec(0.2, seed=0))
    mlp: TrainConfig = field(default_factory=TrainConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)
    fm: FMTrainConfig = field(default_factory=FMTrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(
            k=self.k, split=self.split, mlp=self.mlp, shap=self.shap,
            fm=self.fm, output_dir=self.output_dir,
        )


def _section(doc: dict, name: str, allowed: dict) -> dict:
    """Validate one config section against its known keys and rename maps."""
    section = doc.get(name, {})
    if not isinstance(section, dict):
        raise InputError(f"config section {name!r} must be an object")
    unknown = set(section) - set(allowed)
    if unknown:
        raise InputError(f"unknown keys in config section {name!r}: {sorted(unknown)}")
    return {allowed[key]: value for key, value in section.items()}


def load_config(path: str | Path) -> CliConfig:
    """Parse and validate the JSON config; unknown keys are rejected."""
    path = Path(path)
    if not path.exists():
        raise InputError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise InputError(f"{path}: config root must be an object")
    top_allowed = {"inputs", "output_dir", "k", "split", "mlp", "shap", "fm", "baseline"}
    unknown = set(doc) - top_allowed
    if unknown:
        raise InputError(f"{path}: unknown top-level config keys: {sorted(unknown)}")

    ident = lambda keys: {k: k for k in keys}
    try:
        inputs = InputPaths(**_section(doc, "inputs", ident(["flows_csv", "provisions_csv", "panel_json"])))
        split_kw = _section(doc, "split", ident(["test_fraction", "seed", "stratify"]))
        mlp_kw = _section(doc, "mlp", ident(
            ["hidden_sizes", "learning_rate", "epochs", "batch_size", "seed", "l2_penalty"]))
        if "hidden_sizes" in mlp_kw:
            mlp_kw["hidden_sizes"] = tuple(mlp_kw["hidden_sizes"])
        shap_kw = _section(doc, "shap", ident(
            ["method", "n_permutations", "seed", "background_size", "eval_sample"]))
        fm_kw = _section(doc, "fm", ident(
            ["k", "learning_rate", "epochs", "seed", "init_sigma", "l2_w", "l2_v"]))
        baseline_map = ident(["gravity_csv", "max_iters", "tolerance", "penalty_loadings"])
        baseline_map["lambda"] = "lam"
        baseline_kw = _section(doc, "baseline", baseline_map)
        if baseline_kw.get("penalty_loadings") is not None:
            baseline_kw["penalty_loadings"] = tuple(baseline_kw["penalty_loadings"])
        return CliConfig(
            inputs=inputs,
            output_dir=str(doc.get("output_dir", "ptaflow-out")),
            k=int(doc.get("k", 20)),
            split=SplitSpec(**{"test_fraction": 0.2, "seed": 0, **split_kw}),
            mlp=TrainConfig(**mlp_kw),
            shap=ShapConfig(**shap_kw),
            fm=FMTrainConfig(**fm_kw),
            baseline=BaselineConfig(**baseline_kw),
        )
    except TypeError as exc:
        raise InputError(f"{path}: {exc}") from exc


def _load_panel(config: CliConfig) -> dataset.Panel:
    if config.inputs.panel_json:
        return dataset.load_panel(config.inputs.panel_json)
    if config.inputs.flows_csv and config.inputs.provisions_csv:
        flows = dataset.load_flows_csv(config.inputs.flows_csv)
        provisions = dataset.load_provisions_csv(config.inputs.provisions_csv)
        return dataset.build_panel(flows, provisions)
    raise InputError("config inputs must name panel_json or both flows_csv and provisions_csv")


def _handle_errors(func):
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except InputError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(2)
        except PtaflowError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(1)
    return wrapper


@click.group()
def cli():
    """Provision-level analysis of bilateral trade flows."""


@cli.command("ingest")
@click.option("--flows", "flows_path", required=True, type=click.Path(), help="Flow CSV path.")
@click.option("--provisions", "provisions_path", required=True, type=click.Path(), help="Provision CSV path.")
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output panel JSON path.")
@_handle_errors
def cmd_ingest(flows_path, provisions_path, out_path):
    """Join flow and provision CSVs into a zero-filled panel file."""
    flows = dataset.load_flows_csv(flows_path)
    provisions = dataset.load_provisions_csv(provisions_path)
    panel = dataset.build_panel(flows, provisions)
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    dataset.save_panel(panel, out_path)
    nonzero = sum(r.flow_present for r in panel)
    if nonzero == 0:
        click.echo("warning: no flow record matched a provision key; all flows are zero", err=True)
    click.echo(f"panel rows: {len(panel)} total, {len(panel) - nonzero} zero-flow, {nonzero} nonzero")
    click.echo(f"wrote {out_path}")


@cli.command("synth")
@click.argument("kind", type=click.Choice(["fm", "presence"]))
@click.option("--n", type=int, required=True, help="Number of rows.")
@click.option("--d", type=int, required=True, help="Number of features.")
@click.option("--k", type=int, default=4, show_default=True, help="Latent dimension (fm kind).")
@click.option("--noise-sigma", type=float, default=0.0, show_default=True, help="Target noise (fm kind).")
@click.option("--n-active", type=int, default=5, show_default=True, help="Planted active features (presence kind).")
@click.option("--seed", type=int, required=True)
@click.option("--out", "out_path", required=True, type=click.Path(), help="Output dataset JSON path.")
@_handle_errors
def cmd_synth(kind, n, d, k, noise_sigma, n_active, seed, out_path):
    """Write a synthetic dataset plus its ground-truth sidecar file."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    sidecar = out_path.with_suffix(".truth.json")
    if kind == "fm":
        matrix, model = dataset.synth_fm_data(n, d, k, noise_sigma, seed)
        sidecar.write_text(json.dumps({
            "version": fm.MODEL_FILE_VERSION,
            "w0": model.w0, "w": model.w.tolist(), "V": model.V.tolist(),
        }), encoding="utf-8")
    else:
        matrix, active = dataset.synth_presence_data(n, d, n_active, seed)
        sidecar.write_text(json.dumps({"active_set": active}), encoding="utf-8")
    out_path.write_text(json.dumps(matrix.to_json_dict()), encoding="utf-8")
    click.echo(f"wrote {out_path} and {sidecar}")


@cli.command("stage1")
@click.option("--config", "config_path", required=True, type=click.Path())
@_handle_errors
def cmd_stage1(config_path):
    """Train the link classifier and rank provisions."""
    config = load_config(config_path)
    panel = _load_panel(config)
    result = pipeline.run_stage1(panel, config.pipeline_config())
    click.echo(f"train accuracy {result.train_metrics.accuracy:.4f}  f1 {result.train_metrics.f1:.4f}")
    click.echo(f"test  accuracy {result.test_metrics.accuracy:.4f}  f1 {result.test_metrics.f1:.4f}")
    click.echo(f"top {result.k} provisions:")
    for name, value in result.top_k:
        click.echo(f"  {name:<12} {value:.6g}")
    click.echo(f"artifacts in {Path(config.output_dir) / 'stage1'}")


@cli.command("stage2")
@click.option("--config", "config_path", required=True, type=click.Path())
@_handle_errors
def cmd_stage2(config_path):
    """Fit the interaction regressor on nonzero flows."""
    config = load_config(config_path)
    panel = _load_panel(config)
    stage1 = pipeline.load_stage1_result(config.output_dir)
    result = pipeline.run_stage2(panel, stage1, config.pipeline_config())
    click.echo(f"nonzero rows: {result.n_rows}")
    click.echo(f"held-out rmse: {result.rmse_test:.4f}")
    click.echo(f"artifacts in {Path(config.output_dir) / 'stage2'}")


@cli.command("report")
@click.option("--config", "config_path", required=True, type=click.Path())
@_handle_errors
def cmd_report(config_path):
    """Assemble report.json, CSV exports, and rendered figures."""
    config = load_config(config_path)
    stage1 = pipeline.load_stage1_result(config.output_dir)
    stage2 = pipeline.load_stage2_result(config.output_dir)
    written = pipeline.run_report(stage1, stage2, config.output_dir)
    for path in written:
        click.echo(f"wrote {path}")


@cli.command("baseline")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--estimator", type=click.Choice(["ols", "ppml", "lasso"]), required=True)
@_handle_errors
def cmd_baseline(config_path, estimator):
    """Fit a gravity baseline and write its coefficients."""
    config = load_config(config_path)
    out_dir = Path(config.output_dir) / "baseline"
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / f"{estimator}.json"
    if estimator == "ols":
        if not config.baseline.gravity_csv:
            raise InputError("baseline.gravity_csv is required for the ols estimator")
        obs = gravity_baseline.load_gravity_csv(config.baseline.gravity_csv)
        ln_alpha, b1, b2, b3 = gravity_baseline.fit_loglinear_gravity(obs)
        doc = {"ln_alpha": ln_alpha, "beta1": b1, "beta2": b2, "beta3": b3}
    else:
        panel = _load_panel(config)
        matrix = gravity_baseline.encode_threeway(panel)
        fe_cols = gravity_baseline.fe_column_names(matrix)
        if estimator == "ppml":
            model = gravity_baseline.ppml_fit(
                matrix, fe_cols,
                max_iters=config.baseline.max_iters, tolerance=config.baseline.tolerance,
            )
            doc = model.to_json_dict()
        else:
            lasso_cfg = gravity_baseline.LassoConfig(
                lam=config.baseline.lam,
                penalty_loadings=config.baseline.penalty_loadings,
                max_iters=config.baseline.max_iters,
                tolerance=config.baseline.tolerance,
            )
            model, active = gravity_baseline.lasso_ppml_fit(matrix, fe_cols, lasso_cfg)
            doc = model.to_json_dict()
            doc["active_set"] = active
    out_path.write_text(json.dumps(doc, indent=2, sort_keys=True), encoding="utf-8")
    click.echo(f"wrote {out_path}")


@cli.command("explain")
@click.option("--config", "config_path", required=True, type=click.Path())
@click.option("--row-index", type=int, required=True, help="Panel row to attribute.")
@_handle_errors
def cmd_explain(config_path, row_index):
    """Dump the attribution of one panel row as JSON."""
    config = load_config(config_path)
    panel = _load_panel(config)
    if not 0 <= row_index < len(panel):
        raise InputError(f"row index {row_index} outside panel of {len(panel)} rows")
    stage1 = pipeline.load_stage1_result(config.output_dir)
    matrix = dataset.encode_covariates(
        panel, panel.provision_ids, include_fixed_effects=False, target="binary"
    )
    X = matrix.to_dense()
    rng = np.random.default_rng(config.shap.seed)
    bg_idx = np.sort(rng.permutation(matrix.n_rows)[: config.shap.background_size])
    attribution = shapley.attribute(
        nnclassifier.predictor(stage1.params), X[row_index], X[bg_idx], config.shap.estimator()
    )
    row = panel.rows[row_index]
    click.echo(json.dumps({
        "exporter": row.exporter,
        "importer": row.importer,
        "year": row.year,
        "prediction": nnclassifier.forward(stage1.params, X[row_index]),
        "base_value": attribution.base_value,
        "estimator": attribution.estimator,
        "n_permutations": attribution.n_permutations,
        "attributions": {
            fid: attribution.values[j]
            for j, fid in enumerate(panel.provision_ids)
        },
        "std_errors": {
            fid: attribution.std_errors[j]
            for j, fid in enumerate(panel.provision_ids)
        },
    }, indent=2))


def main():
    cli()


if __name__ == "__main__":
    main()

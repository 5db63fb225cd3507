"""Two-stage orchestration over a panel.

Stage 1 binarizes flows, trains the MLP on provision columns only,
ranks provisions by global Shapley importance and keeps the top k.
Stage 2 drops zero flows, regresses log flow on the selected provisions
plus exporter/importer/year dummies with the factorization machine, and
reports held-out RMSE together with the provision-block interaction
heatmap. Every random draw flows from explicit seeds, so a fixed config
reproduces identical output bytes.

Output layout under the configured directory:

    stage1/metrics.json   stage1/importance.json   stage1/summary.csv
    stage1/model.json     stage2/model.json        stage2/heatmap.csv
    stage2/metrics.json   report.json              heatmap.png
    importance.png
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import figures, fm, nnclassifier, shapley
from .dataset import Panel, SplitSpec, encode_covariates, split
from .errors import InputError
from .fm import FMTrainConfig, InteractionMatrix
from .nnclassifier import Metrics, TrainConfig
from .shapley import Attribution, EstimatorConfig, GlobalImportance


@dataclass(frozen=True)
class ShapConfig:
    """Estimator choice plus sampling sizes for global importance."""

    method: str = "permutation"
    n_permutations: int = 200
    seed: int = 0
    background_size: int = 128
    eval_sample: int = 256

    def __post_init__(self):
        if self.background_size < 1 or self.eval_sample < 1:
            raise InputError("background_size and eval_sample must be >= 1")
        EstimatorConfig(self.method, max(self.n_permutations, 2), self.seed)

    def estimator(self) -> EstimatorConfig:
        return EstimatorConfig(self.method, self.n_permutations, self.seed)


@dataclass(frozen=True)
class PipelineConfig:
    k: int = 20
    split: SplitSpec = field(default_factory=lambda: SplitSpec(0.2, seed=0))
    mlp: TrainConfig = field(default_factory=TrainConfig)
    shap: ShapConfig = field(default_factory=ShapConfig)
    fm: FMTrainConfig = field(default_factory=FMTrainConfig)
    output_dir: str = "ptaflow-out"

    def __post_init__(self):
        if self.k < 1:
            raise InputError("k must be >= 1")

    def snapshot(self) -> dict:
        doc = dataclasses.asdict(self)
        doc.pop("output_dir")  # keep report bytes location-independent
        return doc


@dataclass
class Stage1Result:
    params: nnclassifier.MLPParams
    train_metrics: Metrics
    test_metrics: Metrics
    importance: GlobalImportance
    attributions: list[Attribution]
    provision_ids: list[str]  # panel order; attribution vectors use it
    top_k: list[tuple[str, float]]
    k: int
    config_snapshot: dict


@dataclass
class Stage2Result:
    model: fm.FMModel
    rmse_test: float
    interactions: InteractionMatrix
    n_rows: int
    feature_names: list[str]
    config_snapshot: dict


def run_stage1(panel: Panel, config: PipelineConfig) -> Stage1Result:
    """Train the link classifier and rank provisions by importance.

    The classifier sees provision columns only; country and year dummies
    stay out so the ranking speaks about provisions. Artifacts land under
    ``<output_dir>/stage1/``.
    """
    if len(panel) == 0:
        raise InputError("empty panel")
    classes = {r.flow_present for r in panel}
    if len(classes) < 2:
        raise InputError("panel has a single flow-presence class; nothing to classify")
    d = len(panel.provision_ids)
    if config.k > d:
        raise InputError(f"k={config.k} exceeds the {d} provisions in the panel")

    matrix = encode_covariates(panel, panel.provision_ids, include_fixed_effects=False, target="binary")
    train_m, test_m = split(matrix, config.split)
    params = nnclassifier.train(train_m, config.mlp)
    train_metrics = nnclassifier.evaluate(params, train_m)
    test_metrics = nnclassifier.evaluate(params, test_m)

    X_train = train_m.to_dense()
    rng = np.random.default_rng(config.shap.seed)
    bg_idx = np.sort(rng.permutation(train_m.n_rows)[: config.shap.background_size])
    ev_idx = np.sort(rng.permutation(train_m.n_rows)[: config.shap.eval_sample])
    importance, attributions = shapley.global_importance(
        nnclassifier.predictor(params),
        X_train[ev_idx],
        X_train[bg_idx],
        config.shap.estimator(),
        feature_ids=list(panel.provision_ids),
    )
    selected = shapley.top_k(importance, config.k)

    result = Stage1Result(
        params=params,
        train_metrics=train_metrics,
        test_metrics=test_metrics,
        importance=importance,
        attributions=attributions,
        provision_ids=list(panel.provision_ids),
        top_k=selected,
        k=config.k,
        config_snapshot=config.snapshot(),
    )
    _persist_stage1(result, Path(config.output_dir))
    return result


def _persist_stage1(result: Stage1Result, output_dir: Path) -> None:
    stage_dir = output_dir / "stage1"
    stage_dir.mkdir(parents=True, exist_ok=True)
    (stage_dir / "metrics.json").write_text(
        json.dumps(_stage1_doc(result), indent=2, sort_keys=True), encoding="utf-8"
    )
    (stage_dir / "importance.json").write_text(
        json.dumps(result.importance.to_json_list(), indent=2), encoding="utf-8"
    )
    shapley.export_summary(result.attributions, result.provision_ids, stage_dir / "summary.csv")
    nnclassifier.save_params(result.params, stage_dir / "model.json")


def _stage1_doc(result: Stage1Result) -> dict:
    return {
        "train": result.train_metrics.to_dict(),
        "test": result.test_metrics.to_dict(),
        "k": result.k,
        "top_k": [{"feature": f, "importance": v} for f, v in result.top_k],
        "provision_ids": result.provision_ids,
        "config": result.config_snapshot,
    }


def run_stage2(panel: Panel, stage1: Stage1Result, config: PipelineConfig) -> Stage2Result:
    """Fit the interaction regressor on nonzero flows.

    Covariates are the stage-1 top-k provisions (in ranked order) plus
    exporter, importer and year dummies; the target is ln(flow). The
    heatmap is restricted to the provision block.
    """
    nonzero = panel.nonzero()
    if len(nonzero) < 10:
        raise InputError(f"need at least 10 nonzero-flow rows, got {len(nonzero)}")
    selected = [name for name, _ in stage1.top_k]
    missing = [name for name in selected if name not in panel.provision_ids]
    if missing:
        raise InputError(f"top-k provisions absent from panel: {missing}")

    matrix = encode_covariates(nonzero, selected, include_fixed_effects=True, target="log_flow")
    assert np.all(np.isfinite(matrix.target)), "zero-flow row slipped into stage 2"
    nz_spec = SplitSpec(config.split.test_fraction, config.split.seed, stratify=False)
    train_m, test_m = split(matrix, nz_spec)
    model = fm.train(train_m, config.fm)
    rmse_test = fm.rmse(model, test_m)

    k = len(selected)
    full = fm.interaction_matrix(model, matrix.columns)
    interactions = InteractionMatrix(matrix=full.matrix[:k, :k].copy(), feature_ids=selected)
    result = Stage2Result(
        model=model,
        rmse_test=rmse_test,
        interactions=interactions,
        n_rows=len(nonzero),
        feature_names=list(matrix.columns),
        config_snapshot=config.snapshot(),
    )
    _persist_stage2(result, Path(config.output_dir))
    return result


def _persist_stage2(result: Stage2Result, output_dir: Path) -> None:
    stage_dir = output_dir / "stage2"
    stage_dir.mkdir(parents=True, exist_ok=True)
    fm.save(result.model, stage_dir / "model.json")
    result.interactions.to_csv(stage_dir / "heatmap.csv")
    metrics_doc = {
        "rmse_test": result.rmse_test,
        "n_rows": result.n_rows,
        "feature_names": result.feature_names,
        "config": result.config_snapshot,
    }
    (stage_dir / "metrics.json").write_text(
        json.dumps(metrics_doc, indent=2, sort_keys=True), encoding="utf-8"
    )


def run_report(stage1: Stage1Result, stage2: Stage2Result, path: str | Path) -> list[Path]:
    """Write report.json plus the summary/heatmap CSVs and their rendered
    figures under ``path``. Returns the written paths."""
    out = Path(path)
    (out / "stage1").mkdir(parents=True, exist_ok=True)
    (out / "stage2").mkdir(parents=True, exist_ok=True)
    report = {
        "stage1": {
            "train": stage1.train_metrics.to_dict(),
            "test": stage1.test_metrics.to_dict(),
            "k": stage1.k,
            "top_k": [{"feature": f, "importance": v} for f, v in stage1.top_k],
        },
        "stage2": {
            "rmse_test": stage2.rmse_test,
            "n_rows": stage2.n_rows,
            "heatmap_features": stage2.interactions.feature_ids,
        },
        "config": stage1.config_snapshot,
    }
    written = [out / "report.json"]
    written[0].write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")

    summary_path = out / "stage1" / "summary.csv"
    shapley.export_summary(stage1.attributions, stage1.provision_ids, summary_path)
    written.append(summary_path)

    heatmap_path = out / "stage2" / "heatmap.csv"
    stage2.interactions.to_csv(heatmap_path)
    written.append(heatmap_path)

    heatmap_png = out / "heatmap.png"
    figures.render_heatmap(stage2.interactions, heatmap_png)
    written.append(heatmap_png)

    importance_png = out / "importance.png"
    figures.render_importance(stage1.importance, stage1.k, importance_png)
    written.append(importance_png)
    return written


def load_stage1_result(output_dir: str | Path) -> Stage1Result:
    """Rebuild a Stage1Result from persisted artifacts.

    The summary CSV carries instances and attribution values only, so the
    reloaded attributions hold placeholder base values, standard errors
    and estimator tags; everything the report needs survives the round
    trip byte-exactly.
    """
    stage_dir = Path(output_dir) / "stage1"
    metrics_path = stage_dir / "metrics.json"
    if not metrics_path.exists():
        raise InputError(f"missing stage-1 artifact {metrics_path}; run stage1 first")
    doc = json.loads(metrics_path.read_text(encoding="utf-8"))
    importance_doc = json.loads((stage_dir / "importance.json").read_text(encoding="utf-8"))
    importance = GlobalImportance(
        feature_ids=[e["feature"] for e in importance_doc],
        values=np.array([e["importance"] for e in importance_doc]),
    )
    params = nnclassifier.load_params(stage_dir / "model.json")
    provision_ids = [str(p) for p in doc["provision_ids"]]
    attributions = _load_summary_csv(stage_dir / "summary.csv", provision_ids)
    return Stage1Result(
        params=params,
        train_metrics=Metrics.from_counts(**{k: doc["train"][k] for k in ("tp", "fp", "tn", "fn")}),
        test_metrics=Metrics.from_counts(**{k: doc["test"][k] for k in ("tp", "fp", "tn", "fn")}),
        importance=importance,
        attributions=attributions,
        provision_ids=provision_ids,
        top_k=[(e["feature"], float(e["importance"])) for e in doc["top_k"]],
        k=int(doc["k"]),
        config_snapshot=doc.get("config", {}),
    )


def _load_summary_csv(path: Path, feature_ids: list[str]) -> list[Attribution]:
    if not path.exists():
        raise InputError(f"missing stage-1 artifact {path}; run stage1 first")
    pos = {fid: j for j, fid in enumerate(feature_ids)}
    instances: dict[int, np.ndarray] = {}
    values: dict[int, np.ndarray] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            i = int(row["row_index"])
            if i not in instances:
                instances[i] = np.zeros(len(feature_ids))
                values[i] = np.zeros(len(feature_ids))
            j = pos[row["feature_id"]]
            instances[i][j] = float(row["feature_value"])
            values[i][j] = float(row["shap_value"])
    d = len(feature_ids)
    return [
        Attribution(
            values=values[i],
            base_value=0.0,
            estimator="exact",
            n_permutations=0,
            std_errors=np.zeros(d),
            instance=instances[i],
        )
        for i in sorted(instances)
    ]


def load_stage2_result(output_dir: str | Path) -> Stage2Result:
    stage_dir = Path(output_dir) / "stage2"
    metrics_path = stage_dir / "metrics.json"
    if not metrics_path.exists():
        raise InputError(f"missing stage-2 artifact {metrics_path}; run stage2 first")
    doc = json.loads(metrics_path.read_text(encoding="utf-8"))
    model = fm.load(stage_dir / "model.json")
    interactions = fm.interaction_from_csv(stage_dir / "heatmap.csv")
    return Stage2Result(
        model=model,
        rmse_test=float(doc["rmse_test"]),
        interactions=interactions,
        n_rows=int(doc["n_rows"]),
        feature_names=[str(c) for c in doc["feature_names"]],
        config_snapshot=doc.get("config", {}),
    )

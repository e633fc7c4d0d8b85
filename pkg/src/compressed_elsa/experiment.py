from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from compressed_elsa.artifacts import write_table
from compressed_elsa.baselines import ease_fit, ease_scorer, popularity_scorer, prune_rows
from compressed_elsa.elsa import dense_scorer, train_dense
from compressed_elsa.evaluation import evaluate_model
from compressed_elsa.fixture import make_fixture
from compressed_elsa.inference import build_engine, embedding_bytes
from compressed_elsa.interactions import DatasetSplit, load_interactions, split_strong_generalization
from compressed_elsa.linalg import Layout
from compressed_elsa.sparsifier import train_compressed
from compressed_elsa.types import (
    DataSpec,
    ElsaConfig,
    ExperimentSpec,
    FoldInConfig,
    LearningRateDecay,
    Method,
    ModelSpec,
    PruningSchedule,
    RestartPolicy,
    ScheduleKind,
)
from compressed_elsa.utils import dump_json, load_yaml_or_json

_logger = logging.getLogger(__name__)

KEY_COLUMNS = ["method", "d", "k", "embedding_bytes", "schedule", "restart", "lambda"]


@dataclass(frozen=True)
class GridCell:
    method: Method
    seed: int
    d: int = 0
    k: int = 0
    budget: int = 0
    schedule: str = ""
    restart: str = ""
    lam: float = 0.0
    epochs: int = 20
    prune_events: int | None = None
    batch_size: int = 256
    learning_rate: float = 0.01
    lr_decay: LearningRateDecay = LearningRateDecay.COSINE

    @property
    def label(self) -> str:
        parts = [self.method.value]
        if self.d:
            parts.append(f"d={self.d}")
        if self.k:
            parts.append(f"k={self.k}")
        if self.schedule:
            parts.append(f"{self.schedule}/{self.restart}")
        if self.lam:
            parts.append(f"lambda={self.lam:g}")
        return " ".join(parts)

    def elsa_config(self) -> ElsaConfig:
        return ElsaConfig(
            d=self.d,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            lr_decay=self.lr_decay,
            seed=self.seed,
        )

    def pruning_schedule(self) -> PruningSchedule:
        kind = ScheduleKind(self.schedule)
        T = self.prune_events if self.prune_events is not None else self.epochs - 1
        if kind is not ScheduleKind.CONSTANT:
            T = max(T, 1)
        return PruningSchedule(kind=kind, d=self.d, k=self.k, T=T)


@dataclass
class ExperimentReport:
    results: pd.DataFrame
    per_seed: pd.DataFrame
    curves: dict[str, pd.DataFrame] = field(default_factory=dict)
    timings: list[dict[str, Any]] = field(default_factory=list)
    files: list[Path] = field(default_factory=list)


def load_experiment_spec(path: Path) -> ExperimentSpec:
    return ExperimentSpec.model_validate(load_yaml_or_json(Path(path)))


def load_experiment_data(data: DataSpec, base_dir: Path | None = None) -> DatasetSplit:
    if data.fixture is not None:
        return make_fixture(data.fixture).split
    path = Path(data.path)
    if not path.is_absolute() and base_dir is not None:
        path = base_dir / path
    X = load_interactions(path, min_feedback=data.min_feedback, delimiter=data.delimiter)
    return split_strong_generalization(X, data.val_frac, data.test_frac, data.split_seed)


def _model_cells(model: ModelSpec, seed: int) -> list[GridCell]:
    common = dict(
        method=model.method,
        seed=seed,
        epochs=model.epochs,
        prune_events=model.prune_events,
        batch_size=model.batch_size,
        learning_rate=model.learning_rate,
        lr_decay=model.lr_decay,
    )
    widths = model.widths or [model.d]
    if model.method is Method.DENSE:
        return [GridCell(d=w, budget=embedding_bytes(Layout.DENSE, w), **common) for w in widths]
    if model.method is Method.LOW_DIM:
        return [GridCell(d=b // 4, budget=b, **common) for b in model.budgets]
    if model.method is Method.COMPRESSED:
        return [
            GridCell(d=w, k=b // 8, budget=b, schedule=s.value, restart=r.value, **common)
            for w in widths
            for b in model.budgets
            for s in model.schedules
            for r in model.restarts
        ]
    if model.method is Method.EASE:
        return [GridCell(lam=lam, **common) for lam in model.lambdas]
    if model.method is Method.PRUNED_EASE:
        return [GridCell(k=b // 8, budget=b, lam=lam, **common) for lam in model.lambdas for b in model.budgets]
    return [GridCell(budget=4, **common)]


def expand_grid(spec: ExperimentSpec) -> list[GridCell]:
    """Every (model configuration, seed) pair, seeds innermost."""
    cells = []
    for model in spec.models:
        for template in _model_cells(model, spec.seeds[0]):
            cells.extend(GridCell(**{**asdict(template), "seed": seed}) for seed in spec.seeds)
    return cells


def run_cell(cell: GridCell, split: DatasetSplit, protocol: FoldInConfig) -> tuple[dict[str, Any], dict[str, Any]]:
    started = time.perf_counter()
    budget = cell.budget
    dead_rows = dead_columns = 0
    if cell.method in (Method.DENSE, Method.LOW_DIM):
        model, _ = train_dense(split.train, cell.elsa_config())
        scorer = dense_scorer(model.normalized())
    elif cell.method is Method.COMPRESSED:
        compressed = train_compressed(
            split.train, cell.elsa_config(), cell.pruning_schedule(), RestartPolicy(kind=cell.restart)
        )
        scorer = build_engine(compressed.A_bar_s).scorer()
        dead_rows, dead_columns = compressed.report.dead_rows, compressed.report.dead_columns
    elif cell.method is Method.EASE:
        scorer = ease_scorer(ease_fit(split.train, cell.lam))
        budget = embedding_bytes(Layout.DENSE, split.n_items)
    elif cell.method is Method.PRUNED_EASE:
        scorer = ease_scorer(prune_rows(ease_fit(split.train, cell.lam), cell.k))
    else:
        scorer = popularity_scorer(split.train)
    trained = time.perf_counter()

    report = evaluate_model(scorer, split.test, protocol)
    row: dict[str, Any] = {
        "method": cell.method.value,
        "d": cell.d,
        "k": cell.k,
        "embedding_bytes": budget,
        "schedule": cell.schedule,
        "restart": cell.restart,
        "lambda": cell.lam,
        "seed": cell.seed,
        "users": report.n_users,
        "dead_rows": dead_rows,
        "dead_columns": dead_columns,
    }
    for cutoff in report.cutoffs:
        row[f"ndcg@{cutoff}"] = report.ndcg[cutoff]
        row[f"recall@{cutoff}"] = report.recall[cutoff]
        row[f"ndcg@{cutoff}_user_stderr"] = report.ndcg_stderr[cutoff]
    timing = {
        "cell": cell.label,
        "seed": cell.seed,
        "train_seconds": trained - started,
        "evaluate_seconds": time.perf_counter() - trained,
    }
    _logger.info("%s seed=%d nDCG@%d=%.4f", cell.label, cell.seed, report.cutoffs[-1], report.ndcg[report.cutoffs[-1]])
    return row, timing


def _seed_stderr(values: pd.Series) -> float:
    if len(values) < 2:
        return 0.0
    return float(values.std(ddof=1) / np.sqrt(len(values)))


def aggregate_results(per_seed: pd.DataFrame, report_cutoff: int) -> pd.DataFrame:
    """Mean over seeds per configuration, plus the across-seed standard error at ``report_cutoff``."""
    metric = f"ndcg@{report_cutoff}"
    metric_columns = [c for c in per_seed.columns if c.startswith(("ndcg@", "recall@")) and not c.endswith("_stderr")]
    grouped = per_seed.groupby(KEY_COLUMNS, sort=False, dropna=False)
    results = grouped[metric_columns + ["dead_rows", "dead_columns"]].mean().reset_index()
    results[f"{metric}_stderr"] = grouped[metric].agg(_seed_stderr).to_numpy()
    results["seeds"] = grouped.size().to_numpy()
    return results


def build_curves(results: pd.DataFrame, report_cutoff: int) -> dict[str, pd.DataFrame]:
    metric = f"ndcg@{report_cutoff}"
    columns = [metric, f"{metric}_stderr"]
    curves: dict[str, pd.DataFrame] = {}
    compressed = results[results["method"] == Method.COMPRESSED.value]
    for schedule in dict.fromkeys(compressed["schedule"]):
        subset = compressed[compressed["schedule"] == schedule]
        curves[f"ndcg_vs_k_{schedule}"] = (
            subset[["restart", "d", "k", "embedding_bytes", *columns]]
            .sort_values(["restart", "d", "k"], kind="stable")
            .reset_index(drop=True)
        )
    if compressed["restart"].nunique() > 1:
        curves["ndcg_vs_restart"] = (
            compressed[["schedule", "d", "k", "restart", *columns]]
            .sort_values(["schedule", "d", "k", "restart"], kind="stable")
            .reset_index(drop=True)
        )
    with_width = [Method.DENSE.value, Method.LOW_DIM.value, Method.COMPRESSED.value]
    widths = results[results["method"].isin(with_width)]
    if not widths.empty:
        curves["ndcg_vs_d"] = (
            widths[["method", "schedule", "restart", "k", "d", "embedding_bytes", *columns]]
            .sort_values(["method", "schedule", "restart", "k", "d"], kind="stable")
            .reset_index(drop=True)
        )
    return curves


def run_experiment(
    spec: ExperimentSpec,
    out_dir: Path,
    workers: int = 1,
    base_dir: Path | None = None,
) -> ExperimentReport:
    """Train and evaluate every grid cell; write results, per-seed rows, curves and timings to ``out_dir``."""
    from compressed_elsa.distributed import run_cells

    out_dir = Path(out_dir)
    split = load_experiment_data(spec.data, base_dir)
    cells = expand_grid(spec)
    _logger.info("experiment '%s': %d cells on %d items", spec.name, len(cells), split.n_items)
    outcomes = run_cells(cells, split, spec.protocol, workers=workers)

    per_seed = pd.DataFrame([row for row, _ in outcomes])
    results = aggregate_results(per_seed, spec.report_cutoff)
    curves = build_curves(results, spec.report_cutoff)
    timings = [timing for _, timing in outcomes]

    files = [dump_json(out_dir / "spec.json", spec.model_dump(mode="json"))]
    files += write_table(results, out_dir / "results")
    files += write_table(per_seed, out_dir / "per_seed")
    for name, curve in curves.items():
        files += write_table(curve, out_dir / "curves" / name)
    timing_path = dump_json(out_dir / "timings.json", timings)
    return ExperimentReport(
        results=results, per_seed=per_seed, curves=curves, timings=timings, files=files + [timing_path]
    )

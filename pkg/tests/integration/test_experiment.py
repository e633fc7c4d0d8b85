from pathlib import Path

import pandas as pd

from compressed_elsa.experiment import aggregate_results, expand_grid, load_experiment_spec, run_experiment
from compressed_elsa.types import DataSpec, ExperimentSpec, FixtureConfig, FoldInConfig, Method, ModelSpec, ScheduleKind

CONFIGS = Path(__file__).parents[2] / "configs"


def _small_spec(seeds: list[int]) -> ExperimentSpec:
    return ExperimentSpec(
        name="small",
        data=DataSpec(fixture=FixtureConfig(n_users=200, n_items=80, n_clusters=4, p_in=0.3, p_out=0.02, seed=5)),
        models=[
            ModelSpec(method=Method.COMPRESSED, d=16, budgets=[32, 64], epochs=3, batch_size=64),
            ModelSpec(method=Method.LOW_DIM, budgets=[32, 64], epochs=3, batch_size=64),
        ],
        seeds=seeds,
        protocol=FoldInConfig(cutoffs=[10, 20]),
        report_cutoff=20,
    )


def test_grid_expands_seeds_innermost() -> None:
    cells = expand_grid(_small_spec([0, 1]))
    assert len(cells) == 8
    assert [c.seed for c in cells[:2]] == [0, 1]
    assert cells[0].k == 4 and cells[2].k == 8
    assert [c.d for c in cells[4:8:2]] == [8, 16]


def test_two_models_two_budgets_give_four_cells(tmp_path: Path) -> None:
    report = run_experiment(_small_spec([0]), tmp_path)
    assert len(report.results) == 4
    assert report.results["embedding_bytes"].tolist() == [32, 64, 32, 64]
    assert set(report.curves) == {"ndcg_vs_k_exponential", "ndcg_vs_d"}
    for name in ("results.csv", "results.json", "per_seed.csv", "spec.json", "timings.json"):
        assert (tmp_path / name).exists()
    assert (tmp_path / "curves" / "ndcg_vs_d.csv").exists()


def test_repeated_runs_are_byte_identical(tmp_path: Path) -> None:
    run_experiment(_small_spec([0]), tmp_path / "a")
    run_experiment(_small_spec([0]), tmp_path / "b")
    for name in ("results.csv", "per_seed.csv", "curves/ndcg_vs_k_exponential.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_aggregate_reports_seed_stderr() -> None:
    per_seed = pd.DataFrame(
        {
            "method": ["dense", "dense"],
            "d": [8, 8],
            "k": [0, 0],
            "embedding_bytes": [32, 32],
            "schedule": ["", ""],
            "restart": ["", ""],
            "lambda": [0.0, 0.0],
            "seed": [0, 1],
            "ndcg@20": [0.4, 0.6],
            "ndcg@20_user_stderr": [0.01, 0.01],
            "recall@20": [0.5, 0.7],
            "dead_rows": [0, 0],
            "dead_columns": [0, 2],
        }
    )
    results = aggregate_results(per_seed, 20)
    assert len(results) == 1
    row = results.iloc[0]
    assert abs(row["ndcg@20"] - 0.5) < 1e-12
    assert abs(row["ndcg@20_stderr"] - 0.1) < 1e-12
    assert row["dead_columns"] == 1.0
    assert row["seeds"] == 2
    assert "ndcg@20_user_stderr" not in results.columns


def test_bundled_configs_validate() -> None:
    for name in ("fixture_smoke.json", "fixture_experiment.json", "goodbooks.yaml"):
        spec = load_experiment_spec(CONFIGS / name)
        assert spec.report_cutoff in spec.protocol.cutoffs
        assert expand_grid(spec)


def test_width_curve_lists_every_width(tmp_path: Path) -> None:
    spec = _small_spec([0]).model_copy(
        update={
            "models": [
                ModelSpec(method=Method.DENSE, widths=[8, 16], epochs=2, batch_size=64),
                ModelSpec(method=Method.COMPRESSED, widths=[8, 16], budgets=[32], epochs=2, batch_size=64),
            ]
        }
    )
    curve = run_experiment(spec, tmp_path).curves["ndcg_vs_d"]
    compressed = curve[curve["method"] == "compressed"]
    assert compressed["d"].tolist() == [8, 16]
    assert set(compressed["k"]) == {4}
    assert curve[curve["method"] == "dense"]["d"].tolist() == [8, 16]


def test_constant_cells_keep_their_pruning_events() -> None:
    spec = _small_spec([0]).model_copy(
        update={
            "models": [
                ModelSpec(
                    method=Method.COMPRESSED,
                    d=16,
                    budgets=[32],
                    schedules=[ScheduleKind.CONSTANT, ScheduleKind.EXPONENTIAL],
                    epochs=4,
                    prune_events=3,
                ),
                ModelSpec(method=Method.COMPRESSED, d=16, budgets=[32], schedules=[ScheduleKind.CONSTANT], epochs=4),
            ]
        }
    )
    assert [cell.pruning_schedule().T for cell in expand_grid(spec)] == [3, 3, 3]

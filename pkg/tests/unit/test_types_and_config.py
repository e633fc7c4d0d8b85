from pathlib import Path

import pytest
from pydantic import ValidationError

from compressed_elsa.config import get_settings
from compressed_elsa.types import (
    ExperimentSpec,
    FoldInConfig,
    Method,
    ModelSpec,
    PruningSchedule,
    RunConfig,
    ScheduleKind,
)
from compressed_elsa.utils import derive_seed, load_yaml_or_json, stable_hash


def test_settings_read_environment(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv("CELSA_ARTIFACT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setenv("CELSA_RANDOM_SEED", "42")
    settings = get_settings()
    assert settings.artifact_root == tmp_path / "runs"
    assert settings.random_seed == 42


def test_pruning_schedule_validation() -> None:
    with pytest.raises(ValidationError, match="must not exceed"):
        PruningSchedule(d=8, k=16)
    with pytest.raises(ValidationError):
        PruningSchedule(kind=ScheduleKind.LINEAR, d=8, k=2, T=0)
    assert PruningSchedule(kind=ScheduleKind.CONSTANT, d=8, k=2, T=0).T == 0
    assert PruningSchedule(kind=ScheduleKind.STEPWISE, d=8, k=2, T=4).step_epoch == 4


def test_fold_in_cutoffs_are_sorted_and_positive() -> None:
    assert FoldInConfig(cutoffs=[100, 20, 20]).cutoffs == [20, 100]
    with pytest.raises(ValidationError):
        FoldInConfig(cutoffs=[0])


def test_model_spec_budgets() -> None:
    with pytest.raises(ValidationError, match="budgets"):
        ModelSpec(method=Method.COMPRESSED, d=16)
    with pytest.raises(ValidationError, match="multiple of 8"):
        ModelSpec(method=Method.COMPRESSED, d=16, budgets=[12])
    with pytest.raises(ValidationError, match="nonzeros"):
        ModelSpec(method=Method.COMPRESSED, d=16, budgets=[256])
    with pytest.raises(ValidationError, match="2 epochs"):
        ModelSpec(method=Method.COMPRESSED, d=16, budgets=[64], epochs=1)
    assert ModelSpec(method=Method.COMPRESSED, d=16, budgets=[64], epochs=4, prune_events=4).prune_events == 4
    with pytest.raises(ValidationError, match="at most epochs"):
        ModelSpec(method=Method.COMPRESSED, d=16, budgets=[64], epochs=4, prune_events=5)
    assert ModelSpec(method=Method.LOW_DIM, budgets=[64]).budgets == [64]


def test_experiment_spec_names_the_bad_field() -> None:
    payload = {
        "name": "x",
        "data": {"fixture": {"n_users": 50, "n_items": 20, "n_clusters": 2}},
        "models": [{"method": "dense"}],
        "report_cutoff": 30,
    }
    with pytest.raises(ValidationError, match="report_cutoff"):
        ExperimentSpec.model_validate(payload)
    payload["data"] = {"fixture": {"n_users": 50, "n_items": 20, "n_clusters": 2}, "path": "x.csv"}
    payload["report_cutoff"] = 100
    with pytest.raises(ValidationError, match="exactly one"):
        ExperimentSpec.model_validate(payload)


def test_run_config_rejects_unknown_subcommand() -> None:
    assert RunConfig(subcommand="train", seed=1).subcommand == "train"
    with pytest.raises(ValidationError):
        RunConfig(subcommand="serve", seed=1)


def test_utils(tmp_path: Path) -> None:
    path = tmp_path / "spec.yaml"
    path.write_text("kind: exponential\nd: 64\nk: 8\nT: 4\n", encoding="utf-8")
    assert PruningSchedule.model_validate(load_yaml_or_json(path)).k == 8
    assert stable_hash({"a": 1, "b": 2}) == stable_hash({"b": 2, "a": 1})
    assert derive_seed(7, 3) == derive_seed(7, 3)
    assert derive_seed(7, 3) != derive_seed(7, 4)

from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from pydantic import ValidationError

from compressed_elsa.fixture import (
    fixture_metadata,
    fixture_user_clusters,
    make_fixture,
    planted_item_clusters,
    write_fixture_files,
)
from compressed_elsa.types import FixtureConfig


def test_planted_clusters_are_near_even() -> None:
    labels = planted_item_clusters(23, 5)
    counts = np.bincount(labels)
    assert counts.max() - counts.min() <= 1
    assert labels.tolist() == sorted(labels.tolist())


def test_no_cross_cluster_noise_keeps_users_in_one_cluster() -> None:
    fixture = make_fixture(FixtureConfig(n_users=300, n_items=60, n_clusters=6, p_in=0.3, p_out=0.0, seed=2))
    X = fixture.interactions
    for user in range(X.n_users):
        assert set(fixture.item_clusters[X.row(user)].tolist()) == {int(fixture.user_clusters[user])}


def test_interaction_count_matches_expectation() -> None:
    cfg = FixtureConfig(n_users=2000, n_items=500, n_clusters=10, p_in=0.2, p_out=0.01, seed=0)
    fixture = make_fixture(cfg)
    expected = 0.2 * 50 + 0.01 * 450
    assert abs(fixture.interactions.nnz / cfg.n_users - expected) < 0.5


def test_fixture_is_deterministic() -> None:
    cfg = FixtureConfig(n_users=100, n_items=40, n_clusters=4, seed=9)
    first, second = make_fixture(cfg), make_fixture(cfg)
    assert np.array_equal(first.interactions.indices, second.interactions.indices)
    assert np.array_equal(first.split.test.user_ids, second.split.test.user_ids)


def test_partition_user_clusters_follow_user_ids() -> None:
    fixture = make_fixture(FixtureConfig(n_users=120, n_items=30, n_clusters=3, p_in=0.5, p_out=0.0, seed=4))
    clusters = fixture_user_clusters(fixture, "test")
    for row, cluster in enumerate(clusters.tolist()):
        assert set(fixture.item_clusters[fixture.split.test.row(row)].tolist()) == {cluster}
    with pytest.raises(ValueError):
        fixture_user_clusters(fixture, "holdout")


def test_fixture_config_validation() -> None:
    with pytest.raises(ValidationError):
        FixtureConfig(p_in=0.01, p_out=0.2)
    with pytest.raises(ValidationError):
        FixtureConfig(n_items=5, n_clusters=10)


def test_metadata_tags_name_the_cluster() -> None:
    metadata = fixture_metadata(np.array([0, 0, 1]))
    assert metadata.tags[2][0] == "cluster1"
    assert metadata.tokens(0)[0] == "cluster0"


def test_write_fixture_files(tmp_path: Path) -> None:
    fixture = make_fixture(FixtureConfig(n_users=50, n_items=20, n_clusters=2, p_in=0.5, seed=1))
    paths = write_fixture_files(fixture, tmp_path)
    assert [p.name for p in paths] == ["interactions.csv", "metadata.csv", "item_clusters.csv"]
    frame = pd.read_csv(tmp_path / "interactions.csv")
    assert list(frame.columns) == ["user_id", "item_id", "rating"]
    assert len(frame) == fixture.interactions.nnz

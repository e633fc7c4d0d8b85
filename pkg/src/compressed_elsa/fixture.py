"""Planted-cluster interaction data for desk-scale experiments."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from compressed_elsa.descriptors import ItemMetadata
from compressed_elsa.errors import EmptyDataError
from compressed_elsa.interactions import DatasetSplit, InteractionMatrix, split_strong_generalization
from compressed_elsa.types import FixtureConfig

_logger = logging.getLogger(__name__)

MAX_REDRAWS = 10
THEMES = (
    "mystery", "romance", "fantasy", "history", "science", "poetry",
    "travel", "horror", "comics", "cooking", "sports", "music",
)


@dataclass(frozen=True)
class SyntheticFixture:
    config: FixtureConfig
    interactions: InteractionMatrix
    split: DatasetSplit
    item_clusters: np.ndarray
    user_clusters: np.ndarray


def planted_item_clusters(n_items: int, n_clusters: int) -> np.ndarray:
    labels = np.empty(n_items, dtype=np.int64)
    for cluster, block in enumerate(np.array_split(np.arange(n_items), n_clusters)):
        labels[block] = cluster
    return labels


def make_fixture(cfg: FixtureConfig) -> SyntheticFixture:
    """Each user draws a home cluster, then every item independently with p_in or p_out."""
    rng = np.random.default_rng(cfg.seed)
    item_clusters = planted_item_clusters(cfg.n_items, cfg.n_clusters)
    user_clusters = rng.integers(0, cfg.n_clusters, size=cfg.n_users)
    probs = np.where(user_clusters[:, None] == item_clusters[None, :], cfg.p_in, cfg.p_out)

    dense = rng.random(probs.shape) < probs
    empty = np.flatnonzero(~dense.any(axis=1))
    for _ in range(MAX_REDRAWS):
        if len(empty) == 0:
            break
        dense[empty] = rng.random((len(empty), cfg.n_items)) < probs[empty]
        empty = np.flatnonzero(~dense.any(axis=1))
    if len(empty):
        raise EmptyDataError(
            f"{len(empty)} users still have no interactions after {MAX_REDRAWS} redraws; raise p_in or p_out"
        )

    users, items = np.nonzero(dense)
    interactions = InteractionMatrix.from_pairs(
        users, items, cfg.n_users, cfg.n_items, user_ids=np.arange(cfg.n_users, dtype=np.int64)
    )
    split = split_strong_generalization(interactions, cfg.val_frac, cfg.test_frac, cfg.seed)
    split = DatasetSplit(
        train=split.train,
        validation=split.validation,
        test=split.test,
        item_vocab=split.item_vocab,
        seed=split.seed,
        val_frac=split.val_frac,
        test_frac=split.test_frac,
        source=f"fixture(seed={cfg.seed})",
    )
    _logger.info(
        "fixture: %d users, %d items, %d clusters, %.1f interactions/user",
        cfg.n_users,
        cfg.n_items,
        cfg.n_clusters,
        interactions.nnz / cfg.n_users,
    )
    return SyntheticFixture(
        config=cfg,
        interactions=interactions,
        split=split,
        item_clusters=item_clusters,
        user_clusters=user_clusters,
    )


def fixture_user_clusters(fixture: SyntheticFixture, partition: str) -> np.ndarray:
    """Home clusters of a split partition's users, in the partition's row order."""
    if partition not in ("train", "validation", "test"):
        raise ValueError(f"unknown partition '{partition}'")
    part: InteractionMatrix = getattr(fixture.split, partition)
    return fixture.user_clusters[np.asarray(part.user_ids, dtype=np.int64)]


def fixture_metadata(item_clusters: np.ndarray) -> ItemMetadata:
    titles = {}
    tags = {}
    for item, cluster in enumerate(np.asarray(item_clusters).tolist()):
        titles[item] = f"item {item}"
        tags[item] = [f"cluster{cluster}", THEMES[cluster % len(THEMES)]]
    return ItemMetadata(titles=titles, tags=tags)


def write_fixture_files(fixture: SyntheticFixture, out_dir: str | Path) -> list[Path]:
    """interactions.csv (user,item,rating) and metadata.csv (item_id,title,tags)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    X = fixture.interactions
    users = np.repeat(np.arange(X.n_users), X.row_lengths())
    interactions = pd.DataFrame({"user_id": users, "item_id": X.indices.astype(np.int64), "rating": 1})
    interactions_path = out_dir / "interactions.csv"
    interactions.to_csv(interactions_path, index=False)

    metadata = fixture_metadata(fixture.item_clusters)
    rows = [
        {"item_id": item, "title": metadata.titles[item], "tags": "|".join(metadata.tags[item])}
        for item in range(X.n_items)
    ]
    metadata_path = out_dir / "metadata.csv"
    pd.DataFrame(rows).to_csv(metadata_path, index=False)

    clusters_path = out_dir / "item_clusters.csv"
    pd.DataFrame({"item_id": np.arange(X.n_items), "cluster": fixture.item_clusters}).to_csv(
        clusters_path, index=False
    )
    return [interactions_path, metadata_path, clusters_path]

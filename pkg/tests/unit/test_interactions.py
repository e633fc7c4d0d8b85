from pathlib import Path

import numpy as np
import pytest

from compressed_elsa.errors import DataFormatError, EmptyDataError
from compressed_elsa.interactions import (
    InteractionMatrix,
    detect_header,
    fold_in_split,
    load_interactions,
    read_split,
    split_strong_generalization,
    write_split,
)


def _write(tmp_path: Path, text: str, name: str = "ratings.csv") -> Path:
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_min_feedback_drops_low_ratings(tmp_path: Path) -> None:
    path = _write(tmp_path, "u1,i1,5\nu1,i2,2\nu2,i1,4\n")
    X = load_interactions(path, min_feedback=4)
    assert X.n_users == 2
    assert X.n_items == 1
    assert [X.row(u).tolist() for u in range(2)] == [[0], [0]]

    kept = load_interactions(path, min_feedback=4, keep_all_items=True)
    assert kept.n_items == 2
    assert kept.item_vocab() == {"i1": 0, "i2": 1}


def test_duplicates_are_stored_once(tmp_path: Path) -> None:
    X = load_interactions(_write(tmp_path, "u1,i1\nu1,i1\nu1,i2\n"))
    assert X.nnz == 2


def test_header_detection(tmp_path: Path) -> None:
    assert detect_header(["user_id", "book_id", "rating"])
    assert not detect_header(["1", "2", "5"])
    assert detect_header(["user", "item"])
    assert not detect_header(["17", "42"])

    X = load_interactions(_write(tmp_path, "user_id,book_id,rating\n1,10,5\n2,10,3\n"))
    assert X.n_users == 2
    assert X.item_ids.tolist() == ["10"]


def test_empty_and_malformed_inputs(tmp_path: Path) -> None:
    with pytest.raises(EmptyDataError, match="empty result"):
        load_interactions(_write(tmp_path, "", "empty.csv"))
    with pytest.raises(EmptyDataError):
        load_interactions(_write(tmp_path, "u1,i1,1\n", "low.csv"), min_feedback=4)
    with pytest.raises(DataFormatError, match="line 2"):
        load_interactions(_write(tmp_path, "u1,i1,5\nu2,i2,abc\n", "bad.csv"))
    with pytest.raises(DataFormatError):
        load_interactions(_write(tmp_path, "u1\n", "narrow.csv"))
    with pytest.raises(ValueError):
        load_interactions(_write(tmp_path, "u1,i1\n", "ok.csv"), min_feedback=-1)


def _users(m: int, n: int = 12, seed: int = 0) -> InteractionMatrix:
    rng = np.random.default_rng(seed)
    rows = [rng.choice(n, size=int(rng.integers(2, 6)), replace=False) for _ in range(m)]
    return InteractionMatrix.from_rows(rows, n_items=n)


def test_split_sizes_and_disjointness() -> None:
    X = InteractionMatrix.from_pairs(
        np.repeat(np.arange(10), 3),
        np.tile(np.arange(3), 10),
        n_users=10,
        n_items=3,
        user_ids=np.arange(10),
    )
    split = split_strong_generalization(X, 0.2, 0.2, seed=4)
    assert (split.train.n_users, split.validation.n_users, split.test.n_users) == (6, 2, 2)
    ids = [set(getattr(split, p).user_ids.tolist()) for p in ("train", "validation", "test")]
    assert set().union(*ids) == set(range(10))
    assert sum(len(s) for s in ids) == 10

    no_val = split_strong_generalization(X, 0.0, 0.2, seed=4)
    assert no_val.validation.n_users == 0

    again = split_strong_generalization(X, 0.2, 0.2, seed=4)
    assert again.test.user_ids.tolist() == split.test.user_ids.tolist()


def test_split_rejects_bad_fractions() -> None:
    with pytest.raises(ValueError):
        split_strong_generalization(_users(10), 0.6, 0.5, seed=0)


def test_fold_in_split_examples() -> None:
    pair = fold_in_split(range(10), 0.2, seed=1)
    assert (len(pair.target_items), len(pair.input_items)) == (2, 8)
    assert set(pair.target_items).isdisjoint(pair.input_items)

    pair = fold_in_split([4, 9], 0.5, seed=1)
    assert (len(pair.target_items), len(pair.input_items)) == (1, 1)

    again = fold_in_split(range(10), 0.2, seed=1)
    assert again.target_items.tolist() == fold_in_split(range(10), 0.2, seed=1).target_items.tolist()

    with pytest.raises(ValueError):
        fold_in_split([3], 0.2, seed=0)


def test_split_round_trip(tmp_path: Path) -> None:
    X = load_interactions(_write(tmp_path, "\n".join(f"u{u},i{(u * 7 + j) % 9},5" for u in range(20) for j in range(3))))
    split = split_strong_generalization(X, 0.1, 0.2, seed=2)
    write_split(split, tmp_path / "split")
    loaded = read_split(tmp_path / "split")
    assert loaded.item_vocab == split.item_vocab
    assert loaded.manifest() == split.manifest()
    for name in ("train", "validation", "test"):
        original, restored = getattr(split, name), getattr(loaded, name)
        assert np.array_equal(original.indptr, restored.indptr)
        assert np.array_equal(original.indices, restored.indices)
        assert restored.user_ids.tolist() == [str(u) for u in original.user_ids]

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import httpx
import numpy as np
import pandas as pd
import scipy.sparse as sp

from compressed_elsa.errors import DataFormatError, EmptyDataError
from compressed_elsa.types import SplitManifest
from compressed_elsa.utils import dump_json

_logger = logging.getLogger(__name__)

GOODBOOKS_URL = "https://raw.githubusercontent.com/zygmuntz/goodbooks-10k/master/ratings.csv"

_PARTITIONS = ("train", "validation", "test")


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user x item matrix stored as per-user sorted item lists (CSR without values)."""

    indptr: np.ndarray
    indices: np.ndarray
    n_items: int
    user_ids: np.ndarray | None = None
    item_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        if self.indptr.ndim != 1 or self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise DataFormatError("user offsets must start at 0 and be non-decreasing")
        if int(self.indptr[-1]) != len(self.indices):
            raise DataFormatError("user offsets disagree with the number of stored items")
        if len(self.indices) and (self.indices.min() < 0 or self.indices.max() >= self.n_items):
            raise DataFormatError(f"item index outside [0, {self.n_items})")
        if self.item_ids is not None and len(self.item_ids) != self.n_items:
            raise DataFormatError("item id list length must equal n_items")
        if self.user_ids is not None and len(self.user_ids) != self.n_users:
            raise DataFormatError("user id list length must equal n_users")

    @property
    def n_users(self) -> int:
        return len(self.indptr) - 1

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_pairs(
        cls,
        users: np.ndarray,
        items: np.ndarray,
        n_users: int,
        n_items: int,
        user_ids: np.ndarray | None = None,
        item_ids: np.ndarray | None = None,
    ) -> "InteractionMatrix":
        ones = np.ones(len(users), dtype=np.float32)
        matrix = sp.csr_matrix((ones, (users, items)), shape=(n_users, n_items))
        return cls.from_scipy(matrix, user_ids=user_ids, item_ids=item_ids)

    @classmethod
    def from_rows(cls, rows: Sequence[Iterable[int]], n_items: int) -> "InteractionMatrix":
        materialized = [np.asarray(list(r), dtype=np.int64) for r in rows]
        users = np.concatenate([np.full(len(r), u) for u, r in enumerate(materialized)] or [np.empty(0)])
        items = np.concatenate(materialized or [np.empty(0)])
        return cls.from_pairs(users.astype(np.int64), items.astype(np.int64), len(rows), n_items)

    @classmethod
    def from_scipy(
        cls,
        matrix: sp.spmatrix | sp.sparray,
        user_ids: np.ndarray | None = None,
        item_ids: np.ndarray | None = None,
    ) -> "InteractionMatrix":
        csr = sp.csr_matrix(matrix)
        csr.sum_duplicates()
        csr.eliminate_zeros()
        csr.sort_indices()
        return cls(
            indptr=csr.indptr.astype(np.int64),
            indices=csr.indices.astype(np.int32),
            n_items=int(csr.shape[1]),
            user_ids=user_ids,
            item_ids=item_ids,
        )

    def row(self, user: int) -> np.ndarray:
        return self.indices[self.indptr[user] : self.indptr[user + 1]]

    def row_lengths(self) -> np.ndarray:
        return np.diff(self.indptr)

    def item_counts(self) -> np.ndarray:
        return np.bincount(self.indices, minlength=self.n_items)

    def to_csr(self) -> sp.csr_matrix:
        ones = np.ones(self.nnz, dtype=np.float32)
        return sp.csr_matrix((ones, self.indices, self.indptr), shape=(self.n_users, self.n_items))

    def take(self, users: np.ndarray) -> "InteractionMatrix":
        users = np.asarray(users, dtype=np.int64)
        subset = self.to_csr()[users]
        user_ids = self.user_ids[users] if self.user_ids is not None else None
        return InteractionMatrix.from_scipy(subset, user_ids=user_ids, item_ids=self.item_ids)

    def item_vocab(self) -> dict[str, int]:
        if self.item_ids is None:
            return {str(i): i for i in range(self.n_items)}
        return {str(raw): index for index, raw in enumerate(self.item_ids)}


@dataclass(frozen=True)
class DatasetSplit:
    train: InteractionMatrix
    validation: InteractionMatrix
    test: InteractionMatrix
    item_vocab: dict[str, int]
    seed: int = 0
    val_frac: float = 0.0
    test_frac: float = 0.0
    source: str = ""

    def __post_init__(self) -> None:
        sizes = {self.train.n_items, self.validation.n_items, self.test.n_items}
        if len(sizes) != 1:
            raise DataFormatError(f"partitions disagree on the item count: {sorted(sizes)}")

    @property
    def n_items(self) -> int:
        return self.train.n_items

    def manifest(self) -> SplitManifest:
        return SplitManifest(
            n_items=self.n_items,
            train_users=self.train.n_users,
            validation_users=self.validation.n_users,
            test_users=self.test.n_users,
            seed=self.seed,
            val_frac=self.val_frac,
            test_frac=self.test_frac,
            source=self.source,
        )


@dataclass(frozen=True)
class FoldInPair:
    input_items: np.ndarray
    target_items: np.ndarray


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _first_fields(path: Path, delimiter: str) -> list[str]:
    try:
        with path.open("r", encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    return [f.strip() for f in line.rstrip("\r\n").split(delimiter)]
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from exc
    raise EmptyDataError(f"{path}: empty result (no interactions)")


def detect_header(fields: list[str]) -> bool:
    if len(fields) >= 3:
        return not _is_number(fields[2])
    return any(f.lower().startswith(("user", "item")) for f in fields)


def load_interactions(
    path: str | Path,
    min_feedback: float = 0.0,
    delimiter: str = ",",
    keep_all_items: bool = False,
    has_header: bool | None = None,
) -> InteractionMatrix:
    """Read ``user,item[,rating]`` lines into a binary interaction matrix.

    Interactions rated below ``min_feedback`` are dropped; ids are densified by
    first appearance. Items left without interactions disappear from the
    vocabulary unless ``keep_all_items`` is set. Line numbers in errors count
    non-blank lines.
    """
    if min_feedback < 0:
        raise ValueError("min_feedback must be >= 0")
    path = Path(path)
    fields = _first_fields(path, delimiter)
    if len(fields) not in (2, 3):
        raise DataFormatError(f"{path}: line 1 has {len(fields)} fields, expected 2 or 3")
    header = detect_header(fields) if has_header is None else has_header

    try:
        frame = pd.read_csv(
            path,
            sep=delimiter,
            header=None,
            skiprows=1 if header else 0,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=True,
        )
    except pd.errors.EmptyDataError as exc:
        raise EmptyDataError(f"{path}: empty result (no interactions)") from exc
    except pd.errors.ParserError as exc:
        raise DataFormatError(f"{path}: malformed input: {exc}") from exc
    if frame.shape[1] not in (2, 3):
        raise DataFormatError(f"{path}: expected 2 or 3 columns, found {frame.shape[1]}")

    users = frame[0].fillna("").str.strip()
    items = frame[1].fillna("").str.strip()
    bad = users.eq("") | items.eq("")
    if frame.shape[1] == 3:
        ratings = pd.to_numeric(frame[2].fillna("").str.strip(), errors="coerce")
        bad |= ratings.isna()
        keep = (ratings >= min_feedback).to_numpy()
    else:
        keep = np.ones(len(frame), dtype=bool)
    if bad.any():
        line = int(np.flatnonzero(bad.to_numpy())[0]) + 1 + int(header)
        raise DataFormatError(f"{path}: malformed line {line}")
    if not keep.any():
        raise EmptyDataError(f"{path}: empty result after min_feedback={min_feedback}")

    item_order = pd.unique(items if keep_all_items else items[keep])
    user_order = pd.unique(users[keep])
    user_codes = pd.Index(user_order).get_indexer(users[keep])
    item_codes = pd.Index(item_order).get_indexer(items[keep])
    matrix = InteractionMatrix.from_pairs(
        user_codes.astype(np.int64),
        item_codes.astype(np.int64),
        n_users=len(user_order),
        n_items=len(item_order),
        user_ids=np.asarray(user_order, dtype=object),
        item_ids=np.asarray(item_order, dtype=object),
    )
    _logger.info(
        "loaded %s: %d users, %d items, %d interactions (dropped %d below %.3g)",
        path,
        matrix.n_users,
        matrix.n_items,
        matrix.nnz,
        int((~keep).sum()),
        min_feedback,
    )
    return matrix


def split_strong_generalization(
    X: InteractionMatrix, val_frac: float, test_frac: float, seed: int
) -> DatasetSplit:
    """Partition users into disjoint train / validation / test sets.

    Users with fewer than two interactions always land in train, since fold-in
    needs both an input and a target item.
    """
    if not (0.0 <= val_frac < 1.0 and 0.0 <= test_frac < 1.0 and val_frac + test_frac < 1.0):
        raise ValueError(f"invalid fractions val={val_frac} test={test_frac}; need both >= 0 and sum < 1")
    if X.n_users < 3:
        raise ValueError(f"need at least 3 users to split, got {X.n_users}")

    order = np.random.default_rng(seed).permutation(X.n_users)
    n_val = int(round(val_frac * X.n_users))
    n_test = int(round(test_frac * X.n_users))
    eligible = order[X.row_lengths()[order] >= 2]
    if len(eligible) < n_val + n_test:
        _logger.warning(
            "only %d users have >= 2 interactions; held-out partitions shrink from %d",
            len(eligible),
            n_val + n_test,
        )
    val_users = np.sort(eligible[:n_val])
    test_users = np.sort(eligible[n_val : n_val + n_test])
    held = np.zeros(X.n_users, dtype=bool)
    held[val_users] = True
    held[test_users] = True
    train_users = np.flatnonzero(~held)

    return DatasetSplit(
        train=X.take(train_users),
        validation=X.take(val_users),
        test=X.take(test_users),
        item_vocab=X.item_vocab(),
        seed=seed,
        val_frac=val_frac,
        test_frac=test_frac,
    )


def fold_in_split(user_row: Iterable[int], holdout_frac: float, seed: int) -> FoldInPair:
    row = np.unique(np.asarray(list(user_row), dtype=np.int64))
    if len(row) < 2:
        raise ValueError(f"row with {len(row)} items is too small to split")
    if not 0.0 < holdout_frac < 1.0:
        raise ValueError("holdout_frac must lie in (0, 1)")
    n_target = min(math.ceil(holdout_frac * len(row) - 1e-9), len(row) - 1)
    shuffled = np.random.default_rng(seed).permutation(row)
    return FoldInPair(input_items=np.sort(shuffled[n_target:]), target_items=np.sort(shuffled[:n_target]))


def write_split(split: DatasetSplit, out_dir: str | Path) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name in _PARTITIONS:
        part: InteractionMatrix = getattr(split, name)
        path = out_dir / f"{name}.npz"
        sp.save_npz(path, part.to_csr())
        written.append(path)
        if part.user_ids is not None:
            written.append(dump_json(out_dir / f"{name}_users.json", [str(u) for u in part.user_ids]))
    written.append(dump_json(out_dir / "item_vocab.json", split.item_vocab))
    written.append(dump_json(out_dir / "split_manifest.json", split.manifest().model_dump(mode="json")))
    return written


def read_split(split_dir: str | Path) -> DatasetSplit:
    split_dir = Path(split_dir)
    manifest = SplitManifest.model_validate(json.loads((split_dir / "split_manifest.json").read_text(encoding="utf-8")))
    vocab: dict[str, int] = json.loads((split_dir / "item_vocab.json").read_text(encoding="utf-8"))
    item_ids = np.empty(len(vocab), dtype=object)
    for raw, index in vocab.items():
        item_ids[index] = raw
    parts = {}
    for name in _PARTITIONS:
        users_path = split_dir / f"{name}_users.json"
        user_ids = None
        if users_path.exists():
            user_ids = np.asarray(json.loads(users_path.read_text(encoding="utf-8")), dtype=object)
        parts[name] = InteractionMatrix.from_scipy(
            sp.load_npz(split_dir / f"{name}.npz"), user_ids=user_ids, item_ids=item_ids
        )
    return DatasetSplit(
        item_vocab=vocab,
        seed=manifest.seed,
        val_frac=manifest.val_frac,
        test_frac=manifest.test_frac,
        source=manifest.source,
        **parts,
    )


def download_dataset(url: str, dest: str | Path, timeout: float = 60.0) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    with httpx.stream("GET", url, timeout=timeout, follow_redirects=True) as response:
        response.raise_for_status()
        with dest.open("wb") as handle:
            for chunk in response.iter_bytes():
                handle.write(chunk)
    _logger.info("downloaded %s to %s", url, dest)
    return dest

"""Sparse inference over compressed item embeddings.

The engine keeps two column-oriented copies of the normalised sparse
embeddings: one for gathering the user's latent vector from the interacted
rows, one for scattering that vector back onto every item. Each query
touches only the interacted rows and the active latent columns.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from compressed_elsa.errors import DataFormatError, NormalizationError, ShapeMismatchError
from compressed_elsa.evaluation import Scorer, rank_items
from compressed_elsa.linalg import Layout, SparseMatrix, spmv_sparse_input, spmv_with_work

_logger = logging.getLogger(__name__)

UNIT_NORM_TOLERANCE = 1e-4


@dataclass(frozen=True)
class SparseInferenceEngine:
    embed_layout: SparseMatrix
    deembed_layout: SparseMatrix
    n: int
    d: int
    k: int

    def rows(self) -> SparseMatrix:
        """The embeddings in CSR orientation (shares arrays with the embed layout)."""
        return self.embed_layout.transpose()

    def scorer(self) -> Scorer:
        return lambda items: infer_scores(items, self)


@dataclass(frozen=True)
class RetrievalResult:
    items: np.ndarray
    scores: np.ndarray
    n_requested: int

    def to_records(self, item_ids: list[str] | None = None) -> list[dict[str, object]]:
        records = []
        for item, score in zip(self.items.tolist(), self.scores.tolist()):
            record: dict[str, object] = {"item": int(item), "score": float(score)}
            if item_ids is not None:
                record["item_id"] = item_ids[item]
            records.append(record)
        return records


def _as_csr(A_bar_s: SparseMatrix | np.ndarray) -> SparseMatrix:
    if isinstance(A_bar_s, SparseMatrix):
        return A_bar_s.to_layout(Layout.CSR)
    return SparseMatrix.from_dense(np.asarray(A_bar_s), Layout.CSR)


def _same_triplets(left: SparseMatrix, right: SparseMatrix) -> bool:
    return all(np.array_equal(a, b) for a, b in zip(left.triplets(), right.triplets()))


def build_engine(A_bar_s: SparseMatrix | np.ndarray) -> SparseInferenceEngine:
    csr = _as_csr(A_bar_s)
    norms = np.sqrt(np.bincount(csr.row_ids(), weights=csr.data.astype(np.float64) ** 2, minlength=csr.shape[0]))
    live = csr.row_nnz() > 0
    off = np.flatnonzero(live & (np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE))
    if len(off):
        raise NormalizationError(
            f"{len(off)} rows are not unit-norm (row {int(off[0])} has norm {norms[off[0]]:.6f})"
        )
    if csr.nnz == 0:
        _logger.warning("building an engine from an all-zero embedding matrix; every score will be 0")

    embed = csr.transpose()
    deembed = csr.to_layout(Layout.CSC)
    if not (_same_triplets(embed.transpose(), csr) and _same_triplets(deembed, csr)):
        raise DataFormatError("engine layouts disagree with the source embeddings")
    n, d = csr.shape
    k = int(csr.row_nnz().max(initial=0))
    return SparseInferenceEngine(embed_layout=embed, deembed_layout=deembed, n=n, d=d, k=k)


def _item_indices(items: np.ndarray | list[int], n: int) -> np.ndarray:
    idx = np.unique(np.asarray(items, dtype=np.int64))
    if len(idx) and (idx[0] < 0 or idx[-1] >= n):
        raise ShapeMismatchError(f"item index out of range [0, {n})")
    return idx


def user_embedding(items: np.ndarray | list[int], engine: SparseInferenceEngine) -> tuple[np.ndarray, int]:
    idx = _item_indices(items, engine.n)
    return spmv_sparse_input(engine.embed_layout, idx, np.ones(len(idx)))


def infer_scores_with_work(
    items: np.ndarray | list[int], engine: SparseInferenceEngine
) -> tuple[np.ndarray, int]:
    """Scores for the interacted item set and the multiply-accumulates spent on them."""
    idx = _item_indices(items, engine.n)
    z, gather = spmv_sparse_input(engine.embed_layout, idx, np.ones(len(idx)))
    active = np.flatnonzero(z)
    scores, scatter = spmv_sparse_input(engine.deembed_layout, active, z[active])
    scores[idx] -= 1.0
    return scores, gather + scatter


def infer_scores(items: np.ndarray | list[int], engine: SparseInferenceEngine) -> np.ndarray:
    return infer_scores_with_work(items, engine)[0]


def top_n(scores: np.ndarray, exclusions: np.ndarray | list[int], n: int) -> RetrievalResult:
    if n < 1:
        raise ValueError(f"N must be >= 1, got {n}")
    scores = np.asarray(scores, dtype=np.float64)
    items = rank_items(scores, np.asarray(exclusions, dtype=np.int64), n)
    return RetrievalResult(items=items, scores=scores[items], n_requested=n)


def embedding_bytes(layout: Layout | str, width: int) -> int:
    """Per-item storage: 4 bytes per dense factor, 4 + 4 bytes per sparse nonzero."""
    layout = Layout(layout)
    return 4 * width if layout is Layout.DENSE else 8 * width


def inverted_index_candidates(items: np.ndarray | list[int], engine: SparseInferenceEngine) -> np.ndarray:
    """Items sharing at least one active latent dimension with the query items."""
    idx = _item_indices(items, engine.n)
    if len(idx) == 0:
        return np.zeros(0, dtype=np.int64)
    embed, deembed = engine.embed_layout, engine.deembed_layout
    dims = np.unique(np.concatenate([embed.indices[embed.indptr[i] : embed.indptr[i + 1]] for i in idx]))
    if len(dims) == 0:
        return np.zeros(0, dtype=np.int64)
    hits = np.concatenate([deembed.indices[deembed.indptr[c] : deembed.indptr[c + 1]] for c in dims])
    return np.unique(hits).astype(np.int64)


@dataclass(frozen=True)
class VectorIndex:
    """Single CSR copy of row vectors, queried with a dense latent vector."""

    rows: SparseMatrix

    @classmethod
    def from_matrix(cls, matrix: SparseMatrix | np.ndarray) -> "VectorIndex":
        return cls(rows=_as_csr(matrix))

    def score(self, query: np.ndarray) -> np.ndarray:
        return spmv_with_work(self.rows, query)[0]

    def search(self, query: np.ndarray, n: int, exclusions: np.ndarray | list[int] = ()) -> RetrievalResult:
        return top_n(self.score(query), np.asarray(exclusions, dtype=np.int64), n)

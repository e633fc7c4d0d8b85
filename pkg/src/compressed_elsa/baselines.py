"""Closed-form EASE, row-pruned EASE and item popularity."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from compressed_elsa.errors import ElsaError, ShapeMismatchError
from compressed_elsa.evaluation import Scorer, evaluate_model
from compressed_elsa.interactions import InteractionMatrix
from compressed_elsa.linalg import Layout, SparseMatrix
from compressed_elsa.sparsifier import topk_mask
from compressed_elsa.types import FoldInConfig

_logger = logging.getLogger(__name__)

LAMBDA_GRID = (1.0, 10.0, 100.0, 500.0, 1000.0)


@dataclass(frozen=True)
class EaseWeights:
    B: np.ndarray
    lam: float

    @property
    def n_items(self) -> int:
        return self.B.shape[0]


def ease_fit(X: InteractionMatrix, lam: float) -> EaseWeights:
    """B = I - P diag(1/diag(P)) with P = (X^T X + lam I)^-1, solved by Cholesky in float64."""
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    csr = X.to_csr().astype(np.float64)
    n = X.n_items
    gram = np.asarray((csr.T @ csr).toarray(), dtype=np.float64)
    gram[np.diag_indices(n)] += lam
    try:
        factor = scipy.linalg.cho_factor(gram, lower=False, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise ElsaError(f"Gram matrix is not positive definite for lambda={lam}") from exc
    P = scipy.linalg.cho_solve(factor, np.eye(n))
    B = np.eye(n) - P / np.diag(P)[None, :]
    np.fill_diagonal(B, 0.0)
    _logger.info("fitted EASE on %d items, lambda=%g", n, lam)
    return EaseWeights(B=B, lam=float(lam))


def prune_rows(weights: EaseWeights | np.ndarray, k: int) -> SparseMatrix:
    """Keep the k largest-magnitude weights in each row; values are not rescaled."""
    B = weights.B if isinstance(weights, EaseWeights) else np.asarray(weights, dtype=np.float64)
    mask = topk_mask(B, k).dense()
    return SparseMatrix.from_dense(np.where(mask, B, 0.0), Layout.CSR, dtype=np.float64)


def ease_predict(items: np.ndarray | list[int], B: EaseWeights | SparseMatrix | np.ndarray) -> np.ndarray:
    if isinstance(B, EaseWeights):
        B = B.B
    n = B.shape[0]
    idx = np.unique(np.asarray(items, dtype=np.int64))
    if len(idx) and (idx[0] < 0 or idx[-1] >= n):
        raise ShapeMismatchError(f"item index out of range [0, {n})")
    if len(idx) == 0:
        return np.zeros(n, dtype=np.float64)
    if isinstance(B, SparseMatrix):
        rows = B.to_layout(Layout.CSR).to_scipy()[idx]
        return np.asarray(rows.sum(axis=0), dtype=np.float64).ravel()
    return np.asarray(B, dtype=np.float64)[idx].sum(axis=0)


def ease_scorer(B: EaseWeights | SparseMatrix | np.ndarray) -> Scorer:
    return lambda items: ease_predict(items, B)


def popularity_scores(X_train: InteractionMatrix) -> np.ndarray:
    return X_train.item_counts().astype(np.float64)


def popularity_scorer(X_train: InteractionMatrix) -> Scorer:
    counts = popularity_scores(X_train)
    return lambda items: counts.copy()


def select_lambda(
    X_train: InteractionMatrix,
    validation: InteractionMatrix,
    protocol: FoldInConfig | None = None,
    grid: Sequence[float] = LAMBDA_GRID,
    cutoff: int = 100,
) -> tuple[float, dict[float, float]]:
    """Validation nDCG@cutoff for each lambda; the first best lambda wins."""
    protocol = protocol or FoldInConfig()
    cutoffs = sorted({*protocol.cutoffs, cutoff})
    results: dict[float, float] = {}
    best_lam, best_score = float(grid[0]), -1.0
    for lam in grid:
        report = evaluate_model(ease_scorer(ease_fit(X_train, lam)), validation, protocol, cutoffs)
        results[float(lam)] = report.ndcg[cutoff]
        if report.ndcg[cutoff] > best_score:
            best_lam, best_score = float(lam), report.ndcg[cutoff]
    _logger.info("selected EASE lambda=%g (validation nDCG@%d=%.4f)", best_lam, cutoff, best_score)
    return best_lam, results

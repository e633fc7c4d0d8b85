"""Ranking metrics and the strong-generalization fold-in protocol."""

from __future__ import annotations

import logging
import time
from typing import Callable

import numpy as np

from compressed_elsa.errors import EvaluationError, ShapeMismatchError
from compressed_elsa.interactions import InteractionMatrix, fold_in_split
from compressed_elsa.types import FoldInConfig, MetricReport
from compressed_elsa.utils import derive_seed

_logger = logging.getLogger(__name__)

Scorer = Callable[[np.ndarray], np.ndarray]


def _discounts(k: int) -> np.ndarray:
    return 1.0 / np.log2(np.arange(2, k + 2))


def ndcg_at_k(ranked: np.ndarray, targets: np.ndarray, k: int) -> float | None:
    """Binary-gain nDCG; None when there are no targets (the user is skipped)."""
    targets = np.asarray(targets)
    if len(targets) == 0:
        return None
    top = np.asarray(ranked)[:k]
    hits = np.isin(top, targets)
    discounts = _discounts(k)
    dcg = float(discounts[: len(top)][hits].sum())
    idcg = float(discounts[: min(len(targets), k)].sum())
    return dcg / idcg


def recall_at_k(ranked: np.ndarray, targets: np.ndarray, k: int) -> float | None:
    targets = np.asarray(targets)
    if len(targets) == 0:
        return None
    hits = int(np.isin(np.asarray(ranked)[:k], targets).sum())
    return hits / min(len(targets), k)


def rank_items(scores: np.ndarray, exclude: np.ndarray, limit: int) -> np.ndarray:
    """Best ``limit`` items by score outside ``exclude``; ties go to the lower index."""
    eligible = np.ones(len(scores), dtype=bool)
    eligible[np.asarray(exclude, dtype=np.int64)] = False
    candidates = np.flatnonzero(eligible)
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:limit]]


def _stderr(values: list[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def evaluate_model(
    scorer: Scorer,
    test: InteractionMatrix,
    protocol: FoldInConfig | None = None,
    cutoffs: list[int] | None = None,
    keep_per_user: bool = False,
) -> MetricReport:
    """Fold in each test user, score from the input items and rank the rest against the targets."""
    protocol = protocol or FoldInConfig()
    cutoffs = sorted(set(cutoffs or protocol.cutoffs))
    depth = max(cutoffs)
    ndcg: dict[int, list[float]] = {k: [] for k in cutoffs}
    recall: dict[int, list[float]] = {k: [] for k in cutoffs}
    skipped = 0
    started = time.perf_counter()

    for user in range(test.n_users):
        row = test.row(user)
        if len(row) < 2:
            skipped += 1
            continue
        pair = fold_in_split(row, protocol.holdout_frac, derive_seed(protocol.seed, user))
        if len(pair.target_items) == 0:
            skipped += 1
            continue
        try:
            scores = np.asarray(scorer(pair.input_items), dtype=np.float64)
        except Exception as exc:
            raise EvaluationError(f"scorer failed for test user {user}: {exc}") from exc
        if scores.shape != (test.n_items,):
            raise ShapeMismatchError(f"scorer returned shape {scores.shape} for {test.n_items} items (user {user})")
        ranked = rank_items(scores, pair.input_items, depth)
        for k in cutoffs:
            ndcg[k].append(ndcg_at_k(ranked, pair.target_items, k))
            recall[k].append(recall_at_k(ranked, pair.target_items, k))

    evaluated = len(ndcg[cutoffs[0]])
    report = MetricReport(
        cutoffs=cutoffs,
        ndcg={k: float(np.mean(v)) if v else 0.0 for k, v in ndcg.items()},
        recall={k: float(np.mean(v)) if v else 0.0 for k, v in recall.items()},
        ndcg_stderr={k: _stderr(v) for k, v in ndcg.items()},
        recall_stderr={k: _stderr(v) for k, v in recall.items()},
        n_users=evaluated,
        skipped_users=skipped,
        per_user_ndcg=ndcg if keep_per_user else {},
        per_user_recall=recall if keep_per_user else {},
        timings={"evaluate_seconds": time.perf_counter() - started},
    )
    _logger.info(
        "evaluated %d users (%d skipped): nDCG@%d=%.4f", evaluated, skipped, depth, report.ndcg[depth]
    )
    return report

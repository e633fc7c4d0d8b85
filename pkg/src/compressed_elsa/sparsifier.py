"""Row-wise top-k sparsification, pruning schedules and the compressed training driver."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from compressed_elsa.elsa import ElsaModel, TrainingHistory, fit, init_model
from compressed_elsa.errors import ShapeMismatchError
from compressed_elsa.interactions import InteractionMatrix
from compressed_elsa.linalg import AdamState, Layout, NormalizedRows, SparseMatrix, row_l2_normalize
from compressed_elsa.types import (
    DeadLatentReport,
    ElsaConfig,
    FoldInConfig,
    PruningSchedule,
    RestartKind,
    RestartPolicy,
    ScheduleKind,
)

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TopKMask:
    """Kept column indices per row, ascending; every row keeps min(k, d) entries."""

    shape: tuple[int, int]
    kept: np.ndarray

    @property
    def k(self) -> int:
        return self.kept.shape[1]

    def dense(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        np.put_along_axis(mask, self.kept, True, axis=1)
        return mask


@dataclass(frozen=True)
class CompressedModel:
    A_bar_s: SparseMatrix
    schedule: PruningSchedule
    policy: RestartPolicy
    report: DeadLatentReport
    model: ElsaModel
    history: TrainingHistory | None = None

    @property
    def k(self) -> int:
        return self.schedule.k


def topk_mask(A: np.ndarray, k: int) -> TopKMask:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    A = np.asarray(A)
    if A.ndim != 2:
        raise ShapeMismatchError(f"expected a 2-D matrix, got shape {A.shape}")
    width = min(k, A.shape[1])
    # stable sort on -|A| keeps the lower column first among ties
    order = np.argsort(-np.abs(A), axis=1, kind="stable")[:, :width]
    return TopKMask(shape=(A.shape[0], A.shape[1]), kept=np.sort(order, axis=1))


def sparsify_renormalize(A: np.ndarray, k: int) -> NormalizedRows:
    """Keep the top-k entries per row, then rescale rows to unit norm; ``zero_rows`` flags dead rows."""
    mask = topk_mask(A, k).dense()
    return row_l2_normalize(np.where(mask, A, 0).astype(np.asarray(A).dtype))


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def schedule_value(schedule: PruningSchedule, t: int) -> int:
    d, k, T = schedule.d, schedule.k, schedule.T
    if not 0 <= t <= T:
        raise ValueError(f"event index {t} outside [0, {T}]")
    if schedule.kind is ScheduleKind.CONSTANT:
        value = k
    elif schedule.kind is ScheduleKind.LINEAR:
        value = _round_half_up(d - (d - k) * t / T)
    elif schedule.kind is ScheduleKind.EXPONENTIAL:
        value = _round_half_up(d * (k / d) ** (t / T))
    else:
        value = d if t < (schedule.step_epoch or 0) else k
    return max(k, min(d, value))


def schedule_levels(schedule: PruningSchedule) -> list[int]:
    return [schedule_value(schedule, t) for t in range(schedule.T + 1)]


def dead_latent_report(A_bar_s: SparseMatrix | np.ndarray) -> DeadLatentReport:
    if isinstance(A_bar_s, SparseMatrix):
        nonzero = A_bar_s.to_dense() != 0
    else:
        nonzero = np.asarray(A_bar_s) != 0
    dead_cols = np.flatnonzero(~nonzero.any(axis=0))
    return DeadLatentReport(
        dead_rows=int((~nonzero.any(axis=1)).sum()),
        dead_columns=len(dead_cols),
        dead_column_indices=[int(c) for c in dead_cols],
    )


def apply_pruning_event(
    model: ElsaModel, k_t: int, policy: RestartPolicy, optimizer: AdamState
) -> tuple[ElsaModel, AdamState]:
    """Recompute the mask from the current |A| and reset or keep the surviving weights."""
    if not 1 <= k_t <= model.d:
        raise ValueError(f"k_t={k_t} outside [1, {model.d}]")
    mask = topk_mask(model.A, k_t).dense()
    if policy.kind is RestartKind.RESTART_FROM_INIT:
        if model.init_snapshot is None:
            raise ValueError("restart policy needs the model's init snapshot")
        A = np.where(mask, model.init_snapshot, 0.0).astype(np.float32)
        optimizer = optimizer.reset()
    else:
        A = np.where(mask, model.A, 0.0).astype(np.float32)
        optimizer = optimizer.masked(mask)
    normalized = row_l2_normalize(A)
    dead = int(normalized.zero_rows.sum())
    if dead:
        _logger.warning("pruning to k=%d left %d dead rows", k_t, dead)
    return replace(model, A=normalized.matrix, mask=mask), optimizer


def train_compressed(
    X_train: InteractionMatrix,
    config: ElsaConfig,
    schedule: PruningSchedule,
    policy: RestartPolicy | None = None,
    validation: InteractionMatrix | None = None,
    protocol: FoldInConfig | None = None,
) -> CompressedModel:
    """Dense training with pruning events at epoch boundaries.

    Event t recomputes the mask at the start of epoch t, for every t = 0..T.
    When T equals the number of epochs, event T runs after the last epoch and
    keeps the trained values.
    The mask is frozen between events.
    """
    if schedule.d != config.d:
        raise ShapeMismatchError(f"schedule width d={schedule.d} differs from model d={config.d}")
    if schedule.T > config.epochs:
        raise ValueError(f"schedule has T={schedule.T} events but only {config.epochs} epochs")
    policy = policy or RestartPolicy()
    levels = schedule_levels(schedule)

    def before_epoch(epoch: int, model: ElsaModel, optimizer: AdamState) -> tuple[ElsaModel, AdamState]:
        if epoch >= len(levels):
            return model, optimizer
        _logger.info("pruning event at epoch %d: k=%d (%s)", epoch, levels[epoch], policy.kind.value)
        return apply_pruning_event(model, levels[epoch], policy, optimizer)

    model = init_model(X_train.n_items, config)
    model, history = fit(model, X_train, validation, protocol, before_epoch=before_epoch)
    if schedule.T == config.epochs:
        _logger.info("pruning event after training: k=%d", levels[-1])
        model, _ = apply_pruning_event(
            model, levels[-1], RestartPolicy(kind=RestartKind.CONTINUE), AdamState.zeros(model.A.shape)
        )
        history.active_k[-1] = model.active_k
    A_bar_s = SparseMatrix.from_dense(model.normalized(), Layout.CSR)
    report = dead_latent_report(A_bar_s)
    _logger.info(
        "compressed model: k=%d dead_rows=%d dead_columns=%d", schedule.k, report.dead_rows, report.dead_columns
    )
    return CompressedModel(A_bar_s=A_bar_s, schedule=schedule, policy=policy, report=report, model=model, history=history)


def compressed_from_dense(model: ElsaModel, k: int) -> CompressedModel:
    """One-shot top-k of a trained dense model, no fine-tuning."""
    schedule = PruningSchedule(kind=ScheduleKind.CONSTANT, d=model.d, k=min(k, model.d), T=0)
    mask = topk_mask(model.A, k).dense()
    pruned = replace(model, mask=mask)
    A_bar_s = SparseMatrix.from_dense(pruned.normalized(), Layout.CSR)
    return CompressedModel(
        A_bar_s=A_bar_s,
        schedule=schedule,
        policy=RestartPolicy(kind=RestartKind.CONTINUE),
        report=dead_latent_report(A_bar_s),
        model=pruned,
    )

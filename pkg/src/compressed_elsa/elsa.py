from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp

from compressed_elsa.errors import NonFiniteError, ShapeMismatchError
from compressed_elsa.evaluation import Scorer, evaluate_model
from compressed_elsa.interactions import InteractionMatrix
from compressed_elsa.linalg import NORM_EPS, AdamState, adam_step, row_l2_normalize
from compressed_elsa.types import ElsaConfig, FoldInConfig, LearningRateDecay
from compressed_elsa.utils import derive_seed

_logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ElsaModel:
    """Item embeddings A (n x d). ``mask`` is None while the model is dense."""

    A: np.ndarray
    config: ElsaConfig
    init_snapshot: np.ndarray | None = None
    mask: np.ndarray | None = None

    @property
    def n_items(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def active_k(self) -> int:
        if self.mask is None:
            return self.d
        return int(self.mask.sum(axis=1).max(initial=0))

    def normalized(self) -> np.ndarray:
        """The row-normalised view used by the forward pass (masked when sparse)."""
        A_bar, _, _ = _normalized_embeddings(self.A, self.mask)
        return A_bar.astype(np.float32)


@dataclass
class TrainingHistory:
    losses: list[float] = field(default_factory=list)
    validation_ndcg: list[float] = field(default_factory=list)
    active_k: list[int] = field(default_factory=list)
    learning_rates: list[float] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    def to_dict(self) -> dict[str, list]:
        return {
            "losses": list(self.losses),
            "validation_ndcg": list(self.validation_ndcg),
            "active_k": list(self.active_k),
            "learning_rates": list(self.learning_rates),
        }


EpochHook = Callable[[int, ElsaModel, AdamState], tuple[ElsaModel, AdamState]]


def init_model(n: int, config: ElsaConfig) -> ElsaModel:
    if n < 1:
        raise ValueError("a model needs at least one item")
    rng = np.random.default_rng(config.seed)
    raw = (rng.standard_normal((n, config.d)) / np.sqrt(config.d)).astype(np.float32)
    A = row_l2_normalize(raw).matrix
    return ElsaModel(A=A, config=config, init_snapshot=A.copy())


def _normalized_embeddings(
    A: np.ndarray, mask: np.ndarray | None
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    A64 = np.asarray(A, dtype=np.float64)
    if mask is not None:
        A64 = np.where(mask, A64, 0.0)
    norms = np.linalg.norm(A64, axis=1)
    alive = norms > NORM_EPS
    A_bar = np.where(alive[:, None], A64 / np.where(alive, norms, 1.0)[:, None], 0.0)
    return A_bar, norms, alive


def predict_scores(x: np.ndarray, A_bar: np.ndarray) -> np.ndarray:
    """r = (x^T A_bar) A_bar^T - x^T, as two matrix-vector products."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (A_bar.shape[0],):
        raise ShapeMismatchError(f"interaction vector {x.shape} does not match {A_bar.shape[0]} items")
    A64 = np.asarray(A_bar, dtype=np.float64)
    return A64 @ (x @ A64) - x


def dense_scorer(A_bar: np.ndarray) -> Scorer:
    A64 = np.asarray(A_bar, dtype=np.float64)

    def score(items: np.ndarray) -> np.ndarray:
        items = np.unique(np.asarray(items, dtype=np.int64))
        scores = A64 @ A64[items].sum(axis=0)
        scores[items] -= 1.0
        return scores

    return score


def _unit_rows(M: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    norms = np.linalg.norm(M, axis=1)
    live = norms > NORM_EPS
    U = np.where(live[:, None], M / np.where(live, norms, 1.0)[:, None], 0.0)
    return U, norms, live


def nmse_loss(pred_batch: np.ndarray, target_batch: np.ndarray) -> float:
    """Mean squared distance between row-normalised predictions and targets."""
    pred = np.atleast_2d(np.asarray(pred_batch, dtype=np.float64))
    target = np.atleast_2d(np.asarray(target_batch, dtype=np.float64))
    if pred.shape != target.shape:
        raise ShapeMismatchError(f"prediction {pred.shape} and target {target.shape} differ")
    U, _, _ = _unit_rows(pred)
    T, _, _ = _unit_rows(target)
    return float(np.mean(np.sum((U - T) ** 2, axis=1)))


def nmse_loss_and_grad(
    A: np.ndarray, X_batch: sp.spmatrix | np.ndarray, mask: np.ndarray | None = None
) -> tuple[float, np.ndarray]:
    """Loss of a user batch and its gradient with respect to the raw embeddings A.

    The forward pass masks A, normalises its rows, and scores
    X (A_bar A_bar^T) - X. Masked entries get zero gradient.
    """
    X = sp.csr_matrix(X_batch, dtype=np.float64)
    if X.shape[1] != A.shape[0]:
        raise ShapeMismatchError(f"batch has {X.shape[1]} items, embeddings have {A.shape[0]}")
    b = X.shape[0]
    A_bar, norms, alive = _normalized_embeddings(A, mask)
    Xd = X.toarray()
    Z = np.asarray(X @ A_bar)
    P = Z @ A_bar.T - Xd

    U, pn, live = _unit_rows(P)
    T, _, _ = _unit_rows(Xd)
    loss = float(np.mean(np.sum((U - T) ** 2, axis=1)))

    # d/dp ||p/|p| - t||^2 = -2 (t - u (u.t)) / |p|
    coef = np.sum(U * T, axis=1)
    G = -2.0 * (T - U * coef[:, None]) / np.where(live, pn, 1.0)[:, None]
    G = np.where(live[:, None], G, 0.0) / b

    grad_bar = np.asarray(X.T @ (G @ A_bar)) + G.T @ Z
    radial = np.sum(A_bar * grad_bar, axis=1)
    grad = (grad_bar - A_bar * radial[:, None]) / np.where(alive, norms, 1.0)[:, None]
    grad = np.where(alive[:, None], grad, 0.0)
    if mask is not None:
        grad = np.where(mask, grad, 0.0)
    return loss, grad


def batch_order(users: np.ndarray, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    shuffled = np.random.default_rng(derive_seed(seed, epoch)).permutation(users)
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def run_epoch(
    model: ElsaModel, optimizer: AdamState, X: sp.csr_matrix, users: np.ndarray, epoch: int
) -> tuple[ElsaModel, AdamState, float]:
    A = model.A
    total = 0.0
    for step, batch in enumerate(batch_order(users, model.config.batch_size, model.config.seed, epoch)):
        loss, grad = nmse_loss_and_grad(A, X[batch], model.mask)
        if not np.isfinite(loss):
            raise NonFiniteError(f"non-finite loss {loss} at epoch {epoch}, step {step}")
        try:
            A, optimizer = adam_step(A, grad.astype(np.float32), optimizer)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}, step {step}: {exc}") from exc
        if model.mask is not None:
            A = np.where(model.mask, A, 0.0).astype(np.float32)
        A = row_l2_normalize(A).matrix
        total += loss * len(batch)
    return replace(model, A=A), optimizer, total / max(len(users), 1)


def epoch_learning_rate(config: ElsaConfig, epoch: int, cycle_start: int = 0) -> float:
    """Step size for ``epoch`` in a decay cycle that began at ``cycle_start``.

    Cosine decay runs from the configured rate towards zero at the last epoch.
    """
    if config.lr_decay is LearningRateDecay.CONSTANT:
        return config.learning_rate
    span = max(config.epochs - cycle_start, 1)
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * (epoch - cycle_start) / span))


def validation_ndcg(model: ElsaModel, validation: InteractionMatrix, protocol: FoldInConfig) -> float:
    report = evaluate_model(dense_scorer(model.normalized()), validation, protocol)
    cutoff = 100 if 100 in report.cutoffs else report.cutoffs[-1]
    return report.ndcg[cutoff]


def fit(
    model: ElsaModel,
    X_train: InteractionMatrix,
    validation: InteractionMatrix | None = None,
    protocol: FoldInConfig | None = None,
    before_epoch: EpochHook | None = None,
) -> tuple[ElsaModel, TrainingHistory]:
    """Mini-batch Adam over the users of ``X_train``; rows are re-projected to unit norm after each step.

    The step size follows ``config.lr_decay`` per epoch. When ``before_epoch`` hands back
    a reset optimizer, the decay starts over from that epoch.
    """
    if X_train.n_items != model.n_items:
        raise ShapeMismatchError(f"training data has {X_train.n_items} items, model has {model.n_items}")
    config = model.config
    X = X_train.to_csr()
    users = np.flatnonzero(X_train.row_lengths() > 0)
    optimizer = AdamState.zeros(model.A.shape, config.learning_rate, config.beta1, config.beta2, config.epsilon)
    history = TrainingHistory()
    protocol = protocol or FoldInConfig()
    cycle_start = 0

    for epoch in range(config.epochs):
        started = time.perf_counter()
        if before_epoch is not None:
            model, optimizer = before_epoch(epoch, model, optimizer)
        # a freshly reset optimizer starts a new decay cycle
        if optimizer.step == 0:
            cycle_start = epoch
        rate = epoch_learning_rate(config, epoch, cycle_start)
        optimizer = replace(optimizer, learning_rate=rate)
        model, optimizer, loss = run_epoch(model, optimizer, X, users, epoch)
        history.losses.append(loss)
        history.active_k.append(model.active_k)
        history.learning_rates.append(rate)
        message = f"epoch {epoch + 1}/{config.epochs} loss={loss:.6f} k={model.active_k} lr={rate:.2e}"
        if validation is not None and validation.n_users:
            ndcg = validation_ndcg(model, validation, protocol)
            history.validation_ndcg.append(ndcg)
            message += f" val_ndcg={ndcg:.4f}"
        history.seconds.append(time.perf_counter() - started)
        _logger.info(message)
    return model, history


def train_dense(
    X_train: InteractionMatrix,
    config: ElsaConfig,
    validation: InteractionMatrix | None = None,
    protocol: FoldInConfig | None = None,
) -> tuple[ElsaModel, TrainingHistory]:
    model = init_model(X_train.n_items, config)
    return fit(model, X_train, validation, protocol)

import numpy as np
import pytest

from compressed_elsa.baselines import (
    ease_fit,
    ease_predict,
    ease_scorer,
    popularity_scorer,
    popularity_scores,
    prune_rows,
    select_lambda,
)
from compressed_elsa.evaluation import evaluate_model
from compressed_elsa.fixture import make_fixture
from compressed_elsa.interactions import InteractionMatrix
from compressed_elsa.types import FixtureConfig, FoldInConfig


def _oracle_ease(X: np.ndarray, lam: float) -> np.ndarray:
    """Per-column constrained least squares: B[:, j] = argmin ||X_j - X b||^2 + lam ||b||^2 with b_j = 0."""
    n = X.shape[1]
    gram = X.T @ X + lam * np.eye(n)
    B = np.zeros((n, n))
    for j in range(n):
        others = [i for i in range(n) if i != j]
        B[others, j] = np.linalg.solve(gram[np.ix_(others, others)], (X.T @ X)[others, j])
    return B


def test_ease_matches_linear_solve_oracle() -> None:
    toy = InteractionMatrix.from_rows([[1], [0, 1]], n_items=3)
    assert np.allclose(ease_fit(toy, 1.0).B, _oracle_ease(toy.to_csr().toarray(), 1.0), atol=1e-8)

    rng = np.random.default_rng(0)
    for _ in range(10):
        n = int(rng.integers(3, 21))
        dense = (rng.random((30, n)) < 0.3).astype(np.float64)
        X = InteractionMatrix.from_rows([np.flatnonzero(row) for row in dense], n_items=n)
        lam = float(rng.uniform(0.5, 50.0))
        weights = ease_fit(X, lam)
        assert np.all(np.diag(weights.B) == 0.0)
        assert np.allclose(weights.B, _oracle_ease(dense, lam), atol=1e-8)


def test_ease_large_lambda_shrinks_weights() -> None:
    X = InteractionMatrix.from_rows([[0, 1], [1, 2], [0, 2, 3]], n_items=4)
    assert np.abs(ease_fit(X, 1e6).B).max() < 1e-3


def test_ease_rejects_non_positive_lambda() -> None:
    X = InteractionMatrix.from_rows([[0, 1]], n_items=2)
    with pytest.raises(ValueError):
        ease_fit(X, 0.0)


def test_prune_rows_examples() -> None:
    B = np.array([[0.0, 0.5, -0.9], [0.2, 0.0, 0.1], [0.3, -0.4, 0.0]])
    pruned = prune_rows(B, 1).to_dense()
    assert pruned[0].tolist() == [0.0, 0.0, -0.9]
    assert np.all((pruned != 0).sum(axis=1) <= 1)
    assert np.array_equal(prune_rows(B, 5).to_dense(), B)


def test_ease_predict_matches_dense_product() -> None:
    rng = np.random.default_rng(3)
    B = rng.standard_normal((8, 8))
    np.fill_diagonal(B, 0.0)
    items = [1, 4, 6]
    x = np.zeros(8)
    x[items] = 1.0
    assert np.allclose(ease_predict(items, B), x @ B, atol=1e-12)
    assert np.array_equal(ease_predict([], B), np.zeros(8))
    assert np.array_equal(ease_predict(items, np.zeros((8, 8))), np.zeros(8))

    pruned = prune_rows(B, 3)
    assert np.allclose(ease_scorer(pruned)(items), x @ pruned.to_dense(), atol=1e-12)

    for weights in (B, pruned):
        assert np.allclose(ease_predict([4, 1, 4, 6, 1], weights), ease_predict(items, weights), atol=1e-12)


def test_popularity_scores() -> None:
    rows = [[0, 1], [1, 2], [1], [0, 2, 3]]
    X = InteractionMatrix.from_rows(rows, n_items=4)
    counts = popularity_scores(X)
    assert counts.tolist() == X.to_csr().toarray().sum(axis=0).tolist()
    assert int(np.argmax(popularity_scorer(X)([0]))) == 1

    flat = InteractionMatrix.from_rows([[0, 1, 2]], n_items=3)
    assert np.unique(popularity_scores(flat)).size == 1


def test_select_lambda_reports_every_candidate() -> None:
    fixture = make_fixture(FixtureConfig(n_users=200, n_items=40, n_clusters=4, p_in=0.4, p_out=0.02, seed=1))
    best, scores = select_lambda(fixture.split.train, fixture.split.validation, grid=(1.0, 100.0))
    assert set(scores) == {1.0, 100.0}
    assert scores[best] == max(scores.values())


def _long_tail_users(seed: int, n_users: int = 400, n_items: int = 100) -> InteractionMatrix:
    rng = np.random.default_rng(seed)
    weights = 1.0 / np.arange(1, n_items + 1)
    probs = np.minimum(0.9, 8.0 * weights / weights.sum())
    rows = [np.flatnonzero(rng.random(n_items) < probs).tolist() for _ in range(n_users)]
    return InteractionMatrix.from_rows(rows, n_items=n_items)


def test_random_scores_below_popularity() -> None:
    for seed in range(5):
        train, test = _long_tail_users(2 * seed), _long_tail_users(2 * seed + 1)
        protocol = FoldInConfig(seed=seed, cutoffs=[10])
        rng = np.random.default_rng(seed)
        random_report = evaluate_model(lambda items: rng.random(test.n_items), test, protocol)
        popular_report = evaluate_model(popularity_scorer(train), test, protocol)
        assert random_report.ndcg[10] < popular_report.ndcg[10]

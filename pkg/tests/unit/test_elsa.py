import numpy as np
import pytest
import scipy.sparse as sp
from pydantic import ValidationError

from compressed_elsa.elsa import (
    dense_scorer,
    epoch_learning_rate,
    fit,
    init_model,
    nmse_loss,
    nmse_loss_and_grad,
    predict_scores,
    train_dense,
)
from compressed_elsa.errors import ShapeMismatchError
from compressed_elsa.fixture import make_fixture
from compressed_elsa.interactions import InteractionMatrix
from compressed_elsa.linalg import AdamState
from compressed_elsa.types import ElsaConfig, FixtureConfig, LearningRateDecay


def _toy_interactions() -> InteractionMatrix:
    rows = [[0, 1, 2], [1, 2], [3, 4], [0, 4], [2, 3, 4], [0, 1]]
    return InteractionMatrix.from_rows(rows, n_items=5)


def test_init_model_is_deterministic_and_unit_norm() -> None:
    config = ElsaConfig(d=8, seed=11)
    first = init_model(20, config)
    second = init_model(20, config)
    assert np.array_equal(first.A, second.A)
    assert np.allclose(np.linalg.norm(first.normalized(), axis=1), 1.0, atol=1e-6)

    single = init_model(1, ElsaConfig(d=1, seed=0))
    assert abs(abs(float(single.A[0, 0])) - 1.0) < 1e-7


def test_predict_scores_examples() -> None:
    A_bar = np.array([[1.0], [1.0]])
    assert np.allclose(predict_scores(np.zeros(2), A_bar), 0.0)
    assert np.allclose(predict_scores(np.array([1.0, 0.0]), A_bar), [0.0, 1.0])

    rng = np.random.default_rng(2)
    A = rng.standard_normal((6, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    x = np.zeros(6)
    x[4] = 1.0
    assert abs(predict_scores(x, A)[4]) < 1e-6

    with pytest.raises(ShapeMismatchError):
        predict_scores(np.zeros(5), A)


def test_dense_scorer_matches_predict_scores() -> None:
    rng = np.random.default_rng(4)
    A = rng.standard_normal((9, 4))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    items = np.array([1, 5, 6])
    x = np.zeros(9)
    x[items] = 1.0
    assert np.allclose(dense_scorer(A)(items), predict_scores(x, A), atol=1e-12)


def test_nmse_loss_examples() -> None:
    target = np.array([[0.0, 1.0, 1.0]])
    assert nmse_loss(3.0 * target, target) == pytest.approx(0.0, abs=1e-12)
    assert nmse_loss(-target, target) == pytest.approx(4.0)
    assert nmse_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])) == pytest.approx(2.0)


def test_nmse_gradient_matches_central_differences() -> None:
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 3))
    X = sp.csr_matrix(np.array([[1, 1, 0, 0, 1], [0, 1, 1, 0, 0], [1, 0, 0, 1, 1]], dtype=np.float64))
    _, grad = nmse_loss_and_grad(A, X)

    h = 1e-6
    numeric = np.zeros_like(A)
    for i in range(A.shape[0]):
        for j in range(A.shape[1]):
            plus, minus = A.copy(), A.copy()
            plus[i, j] += h
            minus[i, j] -= h
            numeric[i, j] = (nmse_loss_and_grad(plus, X)[0] - nmse_loss_and_grad(minus, X)[0]) / (2 * h)
    relative = np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-12)
    assert relative < 1e-4


def test_masked_gradient_is_zero_off_mask() -> None:
    rng = np.random.default_rng(1)
    A = rng.standard_normal((5, 4))
    mask = np.zeros_like(A, dtype=bool)
    mask[:, :2] = True
    X = sp.csr_matrix(np.array([[1, 0, 1, 0, 1], [0, 1, 1, 1, 0]], dtype=np.float64))
    _, grad = nmse_loss_and_grad(A, X, mask)
    assert np.all(grad[~mask] == 0.0)
    assert np.any(grad[mask] != 0.0)


def test_epochs_must_be_positive() -> None:
    with pytest.raises(ValidationError):
        ElsaConfig(epochs=0)


def test_train_dense_is_deterministic() -> None:
    X = _toy_interactions()
    config = ElsaConfig(d=4, epochs=3, batch_size=2, seed=9)
    first, history = train_dense(X, config)
    second, _ = train_dense(X, config)
    assert np.array_equal(first.A, second.A)
    assert len(history.losses) == 3
    assert history.active_k == [4, 4, 4]
    assert np.allclose(np.linalg.norm(first.A, axis=1), 1.0, atol=1e-5)


def test_train_dense_rejects_item_mismatch() -> None:
    model = init_model(4, ElsaConfig(d=2))
    with pytest.raises(ShapeMismatchError):
        fit(model, _toy_interactions())


def test_single_item_scores_are_symmetric() -> None:
    rng = np.random.default_rng(6)
    A = rng.standard_normal((12, 5))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    scorer = dense_scorer(A)
    scores = np.stack([scorer(np.array([i])) for i in range(12)])
    np.testing.assert_allclose(scores, scores.T, atol=1e-12)
    np.testing.assert_allclose(np.diag(scores), 0.0, atol=1e-12)


def test_duplicate_input_items_count_once() -> None:
    rng = np.random.default_rng(8)
    A = rng.standard_normal((9, 3))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    scorer = dense_scorer(A)
    np.testing.assert_allclose(scorer(np.array([2, 2, 7])), scorer(np.array([2, 7])), atol=1e-12)


def test_training_loss_falls_over_first_five_epochs() -> None:
    fixture = make_fixture(FixtureConfig(n_users=600, n_items=120, n_clusters=6, p_in=0.25, p_out=0.01, seed=3))
    _, history = train_dense(fixture.split.train, ElsaConfig(d=16, epochs=5, batch_size=32, seed=0))
    losses = np.array(history.losses)
    assert np.all(np.diff(losses) <= 1e-3)
    assert losses[-1] < losses[0] - 0.05


def test_cosine_decay_and_constant_rate() -> None:
    config = ElsaConfig(epochs=10, learning_rate=0.02)
    assert epoch_learning_rate(config, 0) == pytest.approx(0.02)
    assert epoch_learning_rate(config, 5) == pytest.approx(0.01)
    rates = [epoch_learning_rate(config, e) for e in range(10)]
    assert all(a > b for a, b in zip(rates, rates[1:]))
    assert epoch_learning_rate(config, 6, cycle_start=6) == pytest.approx(0.02)

    flat = ElsaConfig(epochs=10, learning_rate=0.02, lr_decay=LearningRateDecay.CONSTANT)
    assert {epoch_learning_rate(flat, e) for e in range(10)} == {0.02}


def test_reset_optimizer_restarts_the_decay() -> None:
    X = _toy_interactions()
    model = init_model(5, ElsaConfig(d=4, epochs=4, batch_size=2, seed=9))

    def reset_at_two(epoch: int, model, optimizer: AdamState):
        return model, optimizer.reset() if epoch == 2 else optimizer

    _, history = fit(model, X, before_epoch=reset_at_two)
    config = model.config
    expected = [epoch_learning_rate(config, 0), epoch_learning_rate(config, 1)]
    expected += [epoch_learning_rate(config, 2, 2), epoch_learning_rate(config, 3, 2)]
    assert history.learning_rates == pytest.approx(expected)
    assert history.learning_rates[2] == pytest.approx(config.learning_rate)

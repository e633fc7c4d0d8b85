from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

from compressed_elsa.errors import DataFormatError, NonFiniteError, ShapeMismatchError
from compressed_elsa.linalg import (
    AdamState,
    Layout,
    SparseMatrix,
    adam_step,
    read_matrix,
    row_l2_normalize,
    spmm_csr,
    spmv,
    spmv_sparse_input,
    spmv_with_work,
    write_matrix,
)


def test_spmv_hand_examples() -> None:
    identity = SparseMatrix.from_scipy(sp.identity(3), Layout.CSR)
    assert np.allclose(spmv(identity, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])

    single = np.zeros((3, 3))
    single[1, 2] = 2.0
    for layout in (Layout.CSR, Layout.CSC):
        M = SparseMatrix.from_dense(single, layout)
        assert np.allclose(spmv(M, np.array([0.0, 0.0, 5.0])), [0.0, 10.0, 0.0])


def test_spmv_layouts_match_dense_oracle() -> None:
    rng = np.random.default_rng(0)
    for _ in range(20):
        dense = sp.random(50, 40, density=0.1, random_state=rng, dtype=np.float64).toarray().astype(np.float32)
        v = rng.standard_normal(40)
        expected = dense.astype(np.float64) @ v
        for layout in (Layout.CSR, Layout.CSC):
            got = spmv(SparseMatrix.from_dense(dense, layout), v)
            assert np.allclose(got, expected, rtol=1e-6, atol=1e-9)


def test_spmv_counts_one_mac_per_touched_nonzero() -> None:
    dense = np.array([[1.0, 0.0, 2.0], [0.0, 3.0, 0.0]])
    csr = SparseMatrix.from_dense(dense, Layout.CSR)
    _, macs = spmv_with_work(csr, np.array([1.0, 1.0, 1.0]))
    assert macs == 3
    csc = SparseMatrix.from_dense(dense, Layout.CSC)
    _, macs = spmv_with_work(csc, np.array([1.0, 0.0, 0.0]))
    assert macs == 1


def test_spmv_sparse_input_requires_csc() -> None:
    csr = SparseMatrix.from_dense(np.eye(2), Layout.CSR)
    with pytest.raises(ValueError):
        spmv_sparse_input(csr, np.array([0]), np.array([1.0]))
    csc = csr.to_layout(Layout.CSC)
    with pytest.raises(ShapeMismatchError):
        spmv_sparse_input(csc, np.array([5]), np.array([1.0]))


def test_spmv_rejects_wrong_length() -> None:
    M = SparseMatrix.from_dense(np.eye(3), Layout.CSR)
    with pytest.raises(ShapeMismatchError):
        spmv(M, np.ones(4))


def test_spmm_matches_dense_product() -> None:
    rng = np.random.default_rng(1)
    dense = sp.random(30, 20, density=0.2, random_state=rng).toarray().astype(np.float32)
    rhs = rng.standard_normal((20, 5))
    got = spmm_csr(SparseMatrix.from_dense(dense, Layout.CSC), rhs)
    assert np.allclose(got, dense.astype(np.float64) @ rhs, atol=1e-9)


def test_transpose_shares_arrays_and_flips_layout() -> None:
    M = SparseMatrix.from_dense(np.array([[0.0, 1.0], [2.0, 0.0], [0.0, 3.0]]), Layout.CSR)
    T = M.transpose()
    assert T.layout is Layout.CSC
    assert T.shape == (2, 3)
    assert T.data is M.data
    assert np.array_equal(T.to_dense(), M.to_dense().T)


def test_sparse_matrix_rejects_unsorted_indices() -> None:
    with pytest.raises(DataFormatError):
        SparseMatrix(
            shape=(1, 3),
            layout=Layout.CSR,
            indptr=np.array([0, 2]),
            indices=np.array([2, 0], dtype=np.int32),
            data=np.ones(2, dtype=np.float32),
        )


def test_row_l2_normalize_examples() -> None:
    result = row_l2_normalize(np.array([[3.0, 4.0], [0.0, 0.0]]))
    assert np.allclose(result.matrix, [[0.6, 0.8], [0.0, 0.0]])
    assert result.zero_rows.tolist() == [False, True]

    unit = np.array([[0.6, 0.8]], dtype=np.float32)
    assert np.allclose(row_l2_normalize(unit).matrix, unit, atol=1e-7)


def test_row_l2_normalize_sparse_keeps_pattern() -> None:
    M = SparseMatrix.from_dense(np.array([[3.0, 0.0, 4.0], [0.0, 0.0, 0.0]]), Layout.CSR)
    result = row_l2_normalize(M)
    assert isinstance(result.matrix, SparseMatrix)
    assert np.allclose(result.matrix.to_dense(), [[0.6, 0.0, 0.8], [0.0, 0.0, 0.0]])
    assert result.zero_rows.tolist() == [False, True]


def test_adam_zero_gradient_keeps_params_and_decays_moments() -> None:
    params = np.ones((2, 2), dtype=np.float32)
    updated, _ = adam_step(params, np.zeros_like(params), AdamState.zeros(params.shape))
    assert np.array_equal(updated, params)

    warm = AdamState(
        m=np.full((2, 2), 0.5, dtype=np.float32), v=np.full((2, 2), 0.25, dtype=np.float32), step=3
    )
    _, decayed = adam_step(params, np.zeros_like(params), warm)
    assert np.allclose(decayed.m, 0.45)
    assert np.all(decayed.v < warm.v)


def test_adam_first_step_moves_by_learning_rate() -> None:
    params = np.zeros((3, 2), dtype=np.float32)
    state = AdamState.zeros(params.shape, learning_rate=0.001)
    updated, new_state = adam_step(params, np.ones_like(params), state)
    assert np.allclose(updated, -0.001, rtol=1e-4)
    assert new_state.step == 1

    again, _ = adam_step(params, np.ones_like(params), state)
    assert np.array_equal(again, updated)


def test_adam_rejects_non_finite_gradients() -> None:
    params = np.zeros((2, 2), dtype=np.float32)
    grads = np.zeros_like(params)
    grads[1, 0] = np.nan
    with pytest.raises(NonFiniteError, match=r"\(1, 0\)"):
        adam_step(params, grads, AdamState.zeros(params.shape))


def test_spem_round_trip_all_layouts(tmp_path: Path) -> None:
    dense = np.array([[0.0, 1.5, 0.0], [2.0, 0.0, -3.0]], dtype=np.float32)
    for layout in (Layout.CSR, Layout.CSC):
        path = write_matrix(tmp_path / f"m_{layout.value}.spem", SparseMatrix.from_dense(dense, layout))
        loaded = read_matrix(path)
        assert isinstance(loaded, SparseMatrix)
        assert loaded.layout is layout
        assert np.array_equal(loaded.to_dense(), dense)
    path = write_matrix(tmp_path / "dense.spem", dense)
    assert np.array_equal(read_matrix(path), dense)


def test_spem_rejects_bad_magic_and_truncation(tmp_path: Path) -> None:
    path = write_matrix(tmp_path / "m.spem", SparseMatrix.from_dense(np.eye(3), Layout.CSR))
    raw = path.read_bytes()

    bad_magic = tmp_path / "magic.spem"
    bad_magic.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(DataFormatError, match="magic"):
        read_matrix(bad_magic)

    truncated = tmp_path / "short.spem"
    truncated.write_bytes(raw[:-4])
    with pytest.raises(DataFormatError, match="expected"):
        read_matrix(truncated)

    with pytest.raises(DataFormatError, match="header"):
        (tmp_path / "tiny.spem").write_bytes(b"SP")
        read_matrix(tmp_path / "tiny.spem")

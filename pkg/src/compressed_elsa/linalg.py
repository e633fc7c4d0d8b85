"""Dense and sparse matrix primitives shared by training and inference.

Sparse values default to single precision; every kernel accumulates in
double precision and returns float64 results together with the number of
multiply-accumulate operations it performed.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp
from numba import njit, prange

from compressed_elsa.errors import DataFormatError, NonFiniteError, ShapeMismatchError

_logger = logging.getLogger(__name__)

NORM_EPS = 1e-12

SPEM_MAGIC = b"SPEM"
SPEM_VERSION = 1
_HEADER = struct.Struct("<4sIQQQI")


class Layout(str, Enum):
    CSR = "csr"
    CSC = "csc"
    DENSE = "dense"

    @property
    def tag(self) -> int:
        return {Layout.CSR: 0, Layout.CSC: 1, Layout.DENSE: 2}[self]

    @classmethod
    def from_tag(cls, tag: int) -> "Layout":
        for layout in cls:
            if layout.tag == tag:
                return layout
        raise DataFormatError(f"unknown SPEM layout tag {tag}")


@dataclass(frozen=True)
class SparseMatrix:
    """Compressed sparse matrix in CSR or CSC orientation.

    ``indptr`` indexes the major axis (rows for CSR, columns for CSC) and
    ``indices`` holds minor-axis positions, sorted and unique per slice.
    """

    shape: tuple[int, int]
    layout: Layout
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.layout is Layout.DENSE:
            raise ValueError("SparseMatrix layout must be CSR or CSC")
        major, minor = self._axes()
        if self.indptr.shape != (major + 1,):
            raise DataFormatError(f"indptr has length {len(self.indptr)}, expected {major + 1}")
        if len(self.indices) != len(self.data) or int(self.indptr[-1]) != len(self.data):
            raise DataFormatError("nnz disagrees between indptr, indices and values")
        if self.indptr[0] != 0 or np.any(np.diff(self.indptr) < 0):
            raise DataFormatError("offsets must start at 0 and be non-decreasing")
        if len(self.indices):
            if self.indices.min() < 0 or self.indices.max() >= minor:
                raise DataFormatError("minor index out of range")
            steps = np.diff(self.indices.astype(np.int64))
            starts = np.zeros(len(self.indices), dtype=bool)
            starts[self.indptr[:-1][np.diff(self.indptr) > 0]] = True
            if np.any(steps[~starts[1:]] <= 0):
                raise DataFormatError("indices must be strictly increasing within each slice")

    def _axes(self) -> tuple[int, int]:
        rows, cols = self.shape
        return (rows, cols) if self.layout is Layout.CSR else (cols, rows)

    @property
    def nnz(self) -> int:
        return int(self.indptr[-1])

    @classmethod
    def from_scipy(
        cls,
        matrix: sp.spmatrix | sp.sparray,
        layout: Layout = Layout.CSR,
        dtype: type = np.float32,
    ) -> "SparseMatrix":
        converted = sp.csr_matrix(matrix) if layout is Layout.CSR else sp.csc_matrix(matrix)
        converted.eliminate_zeros()
        converted.sum_duplicates()
        converted.sort_indices()
        return cls(
            shape=(int(converted.shape[0]), int(converted.shape[1])),
            layout=layout,
            indptr=converted.indptr.astype(np.int64),
            indices=converted.indices.astype(np.int32),
            data=converted.data.astype(dtype),
        )

    @classmethod
    def from_dense(
        cls, array: np.ndarray, layout: Layout = Layout.CSR, dtype: type = np.float32
    ) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(array)), layout, dtype)

    def to_scipy(self) -> sp.csr_matrix | sp.csc_matrix:
        ctor = sp.csr_matrix if self.layout is Layout.CSR else sp.csc_matrix
        return ctor((self.data, self.indices, self.indptr), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        return np.asarray(self.to_scipy().toarray(), dtype=self.data.dtype)

    def to_layout(self, layout: Layout) -> "SparseMatrix":
        if layout is self.layout:
            return self
        return SparseMatrix.from_scipy(self.to_scipy(), layout, self.data.dtype.type)

    def transpose(self) -> "SparseMatrix":
        # Same arrays, opposite orientation: CSR of M is CSC of M^T.
        flipped = Layout.CSC if self.layout is Layout.CSR else Layout.CSR
        return SparseMatrix(
            shape=(self.shape[1], self.shape[0]),
            layout=flipped,
            indptr=self.indptr,
            indices=self.indices,
            data=self.data,
        )

    def triplets(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row, col, value) arrays ordered by row, then column."""
        coo = self.to_scipy().tocoo()
        order = np.lexsort((coo.col, coo.row))
        return coo.row[order].astype(np.int64), coo.col[order].astype(np.int64), coo.data[order]

    def row_ids(self) -> np.ndarray:
        if self.layout is Layout.CSR:
            return np.repeat(np.arange(self.shape[0]), np.diff(self.indptr))
        return self.indices.astype(np.int64)

    def col_ids(self) -> np.ndarray:
        if self.layout is Layout.CSC:
            return np.repeat(np.arange(self.shape[1]), np.diff(self.indptr))
        return self.indices.astype(np.int64)

    def row_nnz(self) -> np.ndarray:
        return np.bincount(self.row_ids(), minlength=self.shape[0])

    def col_nnz(self) -> np.ndarray:
        return np.bincount(self.col_ids(), minlength=self.shape[1])


@njit
def _csr_spmv(indptr, indices, data, v, out):
    macs = 0
    for i in range(len(indptr) - 1):
        acc = 0.0
        for p in range(indptr[i], indptr[i + 1]):
            acc += data[p] * v[indices[p]]
            macs += 1
        out[i] = acc
    return macs


@njit
def _csc_spmv(indptr, indices, data, cols, vals, out):
    macs = 0
    for t in range(len(cols)):
        j = cols[t]
        vj = vals[t]
        if vj == 0.0:
            continue
        for p in range(indptr[j], indptr[j + 1]):
            out[indices[p]] += data[p] * vj
            macs += 1
    return macs


@njit(parallel=True)
def _csr_spmm(indptr, indices, data, dense, out):
    width = dense.shape[1]
    for i in prange(len(indptr) - 1):
        for p in range(indptr[i], indptr[i + 1]):
            a = data[p]
            j = indices[p]
            for c in range(width):
                out[i, c] += a * dense[j, c]


def spmv_with_work(matrix: SparseMatrix, vector: np.ndarray) -> tuple[np.ndarray, int]:
    v = np.ascontiguousarray(vector, dtype=np.float64)
    if v.shape != (matrix.shape[1],):
        raise ShapeMismatchError(f"vector of length {v.shape} cannot multiply matrix of shape {matrix.shape}")
    out = np.zeros(matrix.shape[0], dtype=np.float64)
    if matrix.layout is Layout.CSR:
        macs = _csr_spmv(matrix.indptr, matrix.indices, matrix.data, v, out)
    else:
        cols = np.flatnonzero(v).astype(np.int64)
        macs = _csc_spmv(matrix.indptr, matrix.indices, matrix.data, cols, v[cols], out)
    return out, int(macs)


def spmv(matrix: SparseMatrix, vector: np.ndarray) -> np.ndarray:
    return spmv_with_work(matrix, vector)[0]


def spmv_sparse_input(
    matrix: SparseMatrix, cols: np.ndarray, vals: np.ndarray
) -> tuple[np.ndarray, int]:
    """CSC product with a vector given as (positions, values); touches only those columns."""
    if matrix.layout is not Layout.CSC:
        raise ValueError("sparse-input products need the CSC layout")
    cols = np.ascontiguousarray(cols, dtype=np.int64)
    if len(cols) and (cols.min() < 0 or cols.max() >= matrix.shape[1]):
        raise ShapeMismatchError(f"input positions exceed the {matrix.shape[1]} matrix columns")
    out = np.zeros(matrix.shape[0], dtype=np.float64)
    macs = _csc_spmv(
        matrix.indptr, matrix.indices, matrix.data, cols, np.ascontiguousarray(vals, dtype=np.float64), out
    )
    return out, int(macs)


def spmm_csr(matrix: SparseMatrix, dense: np.ndarray) -> np.ndarray:
    rhs = np.ascontiguousarray(dense, dtype=np.float64)
    if rhs.ndim != 2 or rhs.shape[0] != matrix.shape[1]:
        raise ShapeMismatchError(f"operand of shape {rhs.shape} cannot multiply matrix of shape {matrix.shape}")
    csr = matrix.to_layout(Layout.CSR)
    out = np.zeros((matrix.shape[0], rhs.shape[1]), dtype=np.float64)
    _csr_spmm(csr.indptr, csr.indices, csr.data, rhs, out)
    return out


class NormalizedRows(NamedTuple):
    matrix: np.ndarray | SparseMatrix
    zero_rows: np.ndarray


def row_l2_normalize(matrix: np.ndarray | SparseMatrix) -> NormalizedRows:
    """Scale each row to unit l2 norm; rows with norm <= NORM_EPS stay zero and are flagged."""
    if isinstance(matrix, SparseMatrix):
        weights = matrix.data.astype(np.float64) ** 2
        norms = np.sqrt(np.bincount(matrix.row_ids(), weights=weights, minlength=matrix.shape[0]))
        zero = norms <= NORM_EPS
        scale = np.where(zero, 0.0, 1.0 / np.where(zero, 1.0, norms))
        data = (matrix.data * scale[matrix.row_ids()]).astype(np.float32)
        normalized = SparseMatrix(matrix.shape, matrix.layout, matrix.indptr, matrix.indices, data)
        return NormalizedRows(normalized, zero)

    array = np.asarray(matrix)
    norms = np.linalg.norm(array.astype(np.float64), axis=1)
    zero = norms <= NORM_EPS
    safe = np.where(zero, 1.0, norms)
    normalized = np.where(zero[:, None], 0.0, array / safe[:, None]).astype(array.dtype)
    return NormalizedRows(normalized, zero)


@dataclass(frozen=True)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    @classmethod
    def zeros(
        cls,
        shape: tuple[int, ...],
        learning_rate: float = 0.001,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            m=np.zeros(shape, dtype=np.float32),
            v=np.zeros(shape, dtype=np.float32),
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
        )

    def reset(self) -> "AdamState":
        return AdamState.zeros(self.m.shape, self.learning_rate, self.beta1, self.beta2, self.epsilon)

    def masked(self, keep: np.ndarray) -> "AdamState":
        return AdamState(
            m=np.where(keep, self.m, 0.0).astype(np.float32),
            v=np.where(keep, self.v, 0.0).astype(np.float32),
            step=self.step,
            learning_rate=self.learning_rate,
            beta1=self.beta1,
            beta2=self.beta2,
            epsilon=self.epsilon,
        )


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> tuple[np.ndarray, AdamState]:
    if params.shape != grads.shape or params.shape != state.m.shape:
        raise ShapeMismatchError(
            f"params {params.shape}, grads {grads.shape} and moments {state.m.shape} must match"
        )
    finite = np.isfinite(grads)
    if not finite.all():
        first = tuple(int(i) for i in np.argwhere(~finite)[0])
        raise NonFiniteError(
            f"{int((~finite).sum())} non-finite gradient entries (first at {first}) "
            f"at optimizer step {state.step + 1}"
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * (grads * grads)
    m_hat = m / (1.0 - state.beta1**step)
    v_hat = v / (1.0 - state.beta2**step)
    updated = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    new_state = AdamState(
        m=m.astype(state.m.dtype),
        v=v.astype(state.v.dtype),
        step=step,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        epsilon=state.epsilon,
    )
    return updated.astype(params.dtype), new_state


def write_matrix(path: Path, matrix: SparseMatrix | np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        if isinstance(matrix, SparseMatrix):
            rows, cols = matrix.shape
            handle.write(_HEADER.pack(SPEM_MAGIC, SPEM_VERSION, rows, cols, matrix.nnz, matrix.layout.tag))
            handle.write(matrix.indptr.astype("<u8").tobytes())
            handle.write(matrix.indices.astype("<u4").tobytes())
            handle.write(matrix.data.astype("<f4").tobytes())
        else:
            array = np.asarray(matrix)
            if array.ndim != 2:
                raise ShapeMismatchError("dense SPEM payloads must be 2-D")
            rows, cols = array.shape
            handle.write(_HEADER.pack(SPEM_MAGIC, SPEM_VERSION, rows, cols, rows * cols, Layout.DENSE.tag))
            handle.write(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return path


def read_matrix(path: Path) -> SparseMatrix | np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise DataFormatError(f"{path}: truncated SPEM header")
    magic, version, rows, cols, nnz, tag = _HEADER.unpack_from(raw, 0)
    if magic != SPEM_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if version != SPEM_VERSION:
        raise DataFormatError(f"{path}: unsupported SPEM version {version}")
    layout = Layout.from_tag(tag)
    offset = _HEADER.size
    if layout is Layout.DENSE:
        expected = offset + 4 * rows * cols
        if len(raw) != expected:
            raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
        values = np.frombuffer(raw, dtype="<f4", count=rows * cols, offset=offset)
        return values.astype(np.float32).reshape(rows, cols)

    major = rows if layout is Layout.CSR else cols
    expected = offset + 8 * (major + 1) + 4 * nnz + 4 * nnz
    if len(raw) != expected:
        raise DataFormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    indptr = np.frombuffer(raw, dtype="<u8", count=major + 1, offset=offset).astype(np.int64)
    offset += 8 * (major + 1)
    indices = np.frombuffer(raw, dtype="<u4", count=nnz, offset=offset).astype(np.int32)
    offset += 4 * nnz
    data = np.frombuffer(raw, dtype="<f4", count=nnz, offset=offset).astype(np.float32)
    _logger.debug("read %s matrix %dx%d nnz=%d from %s", layout.value, rows, cols, nnz, path)
    return SparseMatrix((int(rows), int(cols)), layout, indptr, indices, data)

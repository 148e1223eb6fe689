"""Dense and sparse matrix kernels shared by the solver and the metrics.

Dense matrices are plain float64 numpy arrays. Sparse matrices are stored as
coordinate triplets in row-major order (:class:`SparseMatrix`).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import PreconditionError


def as_dense(M, name: str = "matrix") -> np.ndarray:
    """Return ``M`` as a finite 2-D float64 array (no copy when possible)."""
    A = np.asarray(M, dtype=np.float64)
    if A.ndim != 2:
        raise PreconditionError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise PreconditionError(f"{name} contains NaN or Inf")
    return A


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Coordinate-format sparse matrix.

    Triplets are kept sorted row-major with no duplicates and no stored zeros,
    so two matrices with the same nonzeros have identical storage.
    """

    shape: tuple[int, int]
    row: np.ndarray
    col: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        n, p = (int(v) for v in self.shape)
        row = np.asarray(self.row, dtype=np.int64).ravel()
        col = np.asarray(self.col, dtype=np.int64).ravel()
        data = np.asarray(self.data, dtype=np.float64).ravel()
        if not (len(row) == len(col) == len(data)):
            raise PreconditionError("triplet arrays differ in length")
        if n < 0 or p < 0:
            raise PreconditionError(f"negative shape {self.shape}")
        if len(row):
            if row.min() < 0 or row.max() >= n or col.min() < 0 or col.max() >= p:
                raise PreconditionError("triplet index out of range")
            if np.any(data == 0.0):
                raise PreconditionError("sparse matrix stores an explicit zero")
            if not np.all(np.isfinite(data)):
                raise PreconditionError("sparse matrix contains NaN or Inf")
        flat = row * p + col
        order = np.argsort(flat, kind="stable")
        flat = flat[order]
        if len(flat) > 1 and np.any(flat[1:] == flat[:-1]):
            raise PreconditionError("duplicate (row, col) pair in sparse matrix")
        object.__setattr__(self, "shape", (n, p))
        object.__setattr__(self, "row", row[order])
        object.__setattr__(self, "col", col[order])
        object.__setattr__(self, "data", data[order])

    @classmethod
    def zeros(cls, shape) -> "SparseMatrix":
        empty = np.zeros(0)
        return cls(tuple(shape), empty, empty, empty)

    @classmethod
    def from_dense(cls, M) -> "SparseMatrix":
        A = np.asarray(M, dtype=np.float64)
        r, c = np.nonzero(A)
        return cls(A.shape, r, c, A[r, c])

    @classmethod
    def from_triplets(cls, shape, triplets: Iterable[tuple[int, int, float]]) -> "SparseMatrix":
        trip = list(triplets)
        if not trip:
            return cls.zeros(shape)
        r, c, v = zip(*trip)
        return cls(tuple(shape), np.array(r), np.array(c), np.array(v, dtype=np.float64))

    @property
    def nnz(self) -> int:
        return int(len(self.data))

    def triplets(self) -> list[tuple[int, int, float]]:
        return [(int(r), int(c), float(v)) for r, c, v in zip(self.row, self.col, self.data)]

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape)
        out[self.row, self.col] = self.data
        return out

    def matmul(self, x) -> np.ndarray:
        """Sparse product ``S @ x`` for a vector or a column-stacked matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != self.shape[1]:
            raise PreconditionError(f"cannot multiply {self.shape} by {x.shape}")
        out = np.zeros((self.shape[0],) + x.shape[1:])
        np.add.at(out, self.row, self.data.reshape((-1,) + (1,) * (x.ndim - 1)) * x[self.col])
        return out

    __matmul__ = matmul

    def equals(self, other: "SparseMatrix") -> bool:
        return (
            self.shape == other.shape
            and np.array_equal(self.row, other.row)
            and np.array_equal(self.col, other.col)
            and np.array_equal(self.data, other.data)
        )


def to_dense(S, shape=None) -> np.ndarray:
    """Densify a SparseMatrix (or pass through an array)."""
    if isinstance(S, SparseMatrix):
        return S.to_dense()
    if S is None:
        return np.zeros(shape)
    return np.asarray(S, dtype=np.float64)


def qr_thin(M) -> tuple[np.ndarray, np.ndarray]:
    """Reduced QR with a nonnegative diagonal on R."""
    M = as_dense(M)
    n, m = M.shape
    if n < m:
        raise PreconditionError(f"qr_thin needs rows >= cols, got {M.shape}")
    Q, R = np.linalg.qr(M, mode="reduced")
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def pseudoinverse(A) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``1e-12*max(shape)*smax`` are dropped."""
    A = as_dense(A)
    if A.size == 0:
        return np.zeros(A.shape[::-1])
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = 1e-12 * max(A.shape) * (s[0] if len(s) else 0.0)
    inv = np.zeros_like(s)
    keep = s > cutoff
    inv[keep] = 1.0 / s[keep]
    return (Vt.T * inv) @ U.T


def truncated_svd(W, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best rank-``m`` factors ``(U_m, s_m, Vt_m)`` with ``U_m @ diag(s_m) @ Vt_m ~ W``.

    Note the right factor is returned transposed (``m x p``), numpy style.
    """
    W = as_dense(W)
    if not 1 <= m <= min(W.shape):
        raise PreconditionError(f"rank {m} out of range for shape {W.shape}")
    U, s, Vt = np.linalg.svd(W, full_matrices=False)
    return U[:, :m], s[:m], Vt[:m]


def soft_threshold(M, tau) -> np.ndarray:
    """Elementwise shrinkage ``sign(x) * max(|x| - tau, 0)``.

    ``tau`` may be a scalar or anything broadcastable against ``M`` (e.g. one
    threshold per column).
    """
    tau_arr = np.asarray(tau, dtype=np.float64)
    if np.any(tau_arr < 0):
        raise PreconditionError("threshold must be nonnegative")
    M = np.asarray(M, dtype=np.float64)
    return np.sign(M) * np.maximum(np.abs(M) - tau_arr, 0.0)


def top_q_project(M, q: int) -> SparseMatrix:
    """Keep the ``q`` largest-magnitude entries; ties go to the earlier row-major index."""
    if q < 0:
        raise PreconditionError("q must be nonnegative")
    M = np.asarray(M, dtype=np.float64)
    flat = M.ravel()
    nz = np.flatnonzero(flat)
    if len(nz) > q:
        order = np.argsort(-np.abs(flat[nz]), kind="stable")
        nz = np.sort(nz[order[:q]])
    r, c = np.divmod(nz, M.shape[1]) if M.shape[1] else (nz, nz)
    return SparseMatrix(M.shape, r, c, flat[nz])

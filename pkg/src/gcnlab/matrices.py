"""Sparse (CSR) and dense matrix primitives.

All numeric payloads are float64. Dense matrices are plain 2-D numpy
arrays; :class:`SparseMatrix` is a minimal compressed-sparse-row
container with the validation this project relies on:

* ``row_offsets`` has length ``n_rows + 1``, is non-decreasing, and its
  last entry equals ``len(values)``;
* column indices are strictly increasing within each row and < n_cols;
* values are finite (no NaN/Inf).

Instances are treated as immutable after construction and are safe to
share between threads.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def as_dense(values, n_rows=None, n_cols=None) -> np.ndarray:
    """Coerce to a float64 2-D array, optionally checking its shape."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D array, got ndim={arr.ndim}")
    if n_rows is not None and arr.shape[0] != n_rows:
        raise ShapeError(f"expected {n_rows} rows, got {arr.shape[0]}")
    if n_cols is not None and arr.shape[1] != n_cols:
        raise ShapeError(f"expected {n_cols} cols, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError("dense matrix contains NaN/Inf")
    return arr


class SparseMatrix:
    """Immutable CSR matrix."""

    __slots__ = ("n_rows", "n_cols", "row_offsets", "col_indices", "values", "_transpose")

    def __init__(self, n_rows, n_cols, row_offsets, col_indices, values, _validate=True):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_cols)
        self.row_offsets = np.asarray(row_offsets, dtype=np.int64)
        self.col_indices = np.asarray(col_indices, dtype=np.int64)
        self.values = np.asarray(values, dtype=np.float64)
        self._transpose = None
        if _validate:
            self._validate()

    def _validate(self):
        if self.row_offsets.shape != (self.n_rows + 1,):
            raise ShapeError("row_offsets must have length n_rows + 1")
        if self.row_offsets[0] != 0 or self.row_offsets[-1] != len(self.values):
            raise ShapeError("row_offsets must start at 0 and end at nnz")
        if np.any(np.diff(self.row_offsets) < 0):
            raise ShapeError("row_offsets must be non-decreasing")
        if len(self.col_indices) != len(self.values):
            raise ShapeError("col_indices and values must have equal length")
        if len(self.col_indices) and (
            self.col_indices.min() < 0 or self.col_indices.max() >= self.n_cols
        ):
            raise ShapeError("column index out of range")
        for i in range(self.n_rows):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            if hi - lo > 1 and np.any(np.diff(self.col_indices[lo:hi]) <= 0):
                raise ShapeError(f"columns in row {i} are not strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("sparse matrix contains NaN/Inf")

    @classmethod
    def from_coo(cls, n_rows, n_cols, rows, cols, vals, sum_duplicates=False):
        """Build CSR from unordered triplets.

        Duplicate (row, col) pairs are summed when ``sum_duplicates`` is
        set and rejected otherwise.
        """
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=np.float64)
        if not (len(rows) == len(cols) == len(vals)):
            raise ShapeError("COO triplet arrays must have equal length")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        if len(rows):
            dup = (np.diff(rows) == 0) & (np.diff(cols) == 0)
            if np.any(dup):
                if not sum_duplicates:
                    raise ShapeError("duplicate (row, col) entries in COO input")
                # segment-sum duplicates onto their first occurrence
                keep = np.concatenate(([True], ~dup))
                seg = np.cumsum(keep) - 1
                summed = np.zeros(seg[-1] + 1, dtype=np.float64)
                np.add.at(summed, seg, vals)
                rows, cols, vals = rows[keep], cols[keep], summed
        offsets = np.zeros(n_rows + 1, dtype=np.int64)
        np.add.at(offsets, rows + 1, 1)
        offsets = np.cumsum(offsets)
        return cls(n_rows, n_cols, offsets, cols, vals)

    @property
    def nnz(self) -> int:
        return len(self.values)

    def row_slice(self, i):
        """(col_indices, values) of row ``i`` as read-only views."""
        lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
        return self.col_indices[lo:hi], self.values[lo:hi]

    def matmul_dense(self, dense: np.ndarray) -> np.ndarray:
        """Sparse @ dense product; rows with no entries yield zero rows."""
        dense = as_dense(dense)
        if self.n_cols != dense.shape[0]:
            raise ShapeError(
                f"spmm mismatch: {self.n_rows}x{self.n_cols} @ {dense.shape}"
            )
        out = np.zeros((self.n_rows, dense.shape[1]), dtype=np.float64)
        for i in range(self.n_rows):
            lo, hi = self.row_offsets[i], self.row_offsets[i + 1]
            if hi > lo:
                out[i] = self.values[lo:hi] @ dense[self.col_indices[lo:hi]]
        return out

    def transpose(self) -> "SparseMatrix":
        """Transposed copy; cached, since backward passes reuse it."""
        if self._transpose is None:
            rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
            self._transpose = SparseMatrix.from_coo(
                self.n_cols, self.n_rows, self.col_indices, rows, self.values
            )
        return self._transpose

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.n_rows, self.n_cols), dtype=np.float64)
        for i in range(self.n_rows):
            cols, vals = self.row_slice(i)
            out[i, cols] = vals
        return out

    def column_sq_norms(self) -> np.ndarray:
        """Per-column sum of squared entries (importance weights)."""
        out = np.zeros(self.n_cols, dtype=np.float64)
        np.add.at(out, self.col_indices, self.values**2)
        return out

    def restrict_rows(self, row_set) -> "SparseMatrix":
        """Keep only the listed rows' entries (same shape)."""
        mask = np.zeros(self.n_rows, dtype=bool)
        mask[np.asarray(row_set, dtype=np.int64)] = True
        rows = np.repeat(np.arange(self.n_rows), np.diff(self.row_offsets))
        keep = mask[rows]
        return SparseMatrix.from_coo(
            self.n_rows, self.n_cols, rows[keep], self.col_indices[keep], self.values[keep]
        )


def spmm(left: SparseMatrix, right: np.ndarray) -> np.ndarray:
    """Exact sparse-times-dense product in 64-bit arithmetic."""
    return left.matmul_dense(right)


def spmm_transposed(left: SparseMatrix, right: np.ndarray) -> np.ndarray:
    """left.T @ right, accumulated by scattering left's rows in order.

    Rows of ``right`` that are exactly zero contribute exact zeros, so
    the result is bit-identical whether or not ``left`` carries rows
    whose ``right`` counterpart vanishes (a full Laplacian versus its
    restriction to the active rows). The backward recursions rely on
    this to make all-neighbor sampling reproduce full-batch results
    bit for bit.
    """
    right = as_dense(right)
    if left.n_rows != right.shape[0]:
        raise ShapeError(
            f"spmm_transposed mismatch: ({left.n_rows}x{left.n_cols}).T @ {right.shape}"
        )
    out = np.zeros((left.n_cols, right.shape[1]), dtype=np.float64)
    for i in range(left.n_rows):
        lo, hi = left.row_offsets[i], left.row_offsets[i + 1]
        if hi > lo:
            out[left.col_indices[lo:hi]] += left.values[lo:hi, None] * right[i]
    return out


def identity_sparse(n: int) -> SparseMatrix:
    idx = np.arange(n, dtype=np.int64)
    return SparseMatrix(n, n, np.arange(n + 1), idx, np.ones(n))

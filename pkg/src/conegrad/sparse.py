"""Compressed-sparse-column matrices.

CSC is the only sparse layout used in this package; other layouts are
converted at the I/O boundary if they ever appear.  Matrices are immutable:
structure and values are validated once at construction, and every later
operation can rely on the invariants (monotone column pointers, strictly
increasing row indices within each column, finite values).

The matrix-vector kernels live in :mod:`conegrad._kernels`, which selects a
compiled or pure NumPy backend at import time.
"""

import numpy as np

from conegrad import _kernels
from conegrad.errors import ValidationError


class CscMatrix:
    """Immutable sparse matrix in compressed-sparse-column form.

    Attributes:
        nrows: number of rows.
        ncols: number of columns.
        col_ptr: int64 array of length ``ncols + 1``; the entries of column
            ``j`` occupy the half-open slice ``[col_ptr[j], col_ptr[j + 1])``.
        row_idx: int64 array of row indices, strictly increasing within each
            column.
        values: float64 array of stored entries, all finite.
    """

    __slots__ = ("nrows", "ncols", "col_ptr", "row_idx", "values", "_entry_cols")

    def __init__(self, nrows, ncols, col_ptr, row_idx, values):
        nrows = int(nrows)
        ncols = int(ncols)
        if nrows < 0 or ncols < 0:
            raise ValidationError("matrix dimensions must be nonnegative")
        col_ptr = np.ascontiguousarray(col_ptr, dtype=np.int64)
        row_idx = np.ascontiguousarray(row_idx, dtype=np.int64)
        try:
            values = np.ascontiguousarray(values, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"matrix values are not numeric: {exc}") from None
        if col_ptr.ndim != 1 or col_ptr.shape[0] != ncols + 1:
            raise ValidationError(f"col_ptr must have length ncols + 1 = {ncols + 1}")
        if row_idx.ndim != 1 or values.ndim != 1 or row_idx.shape[0] != values.shape[0]:
            raise ValidationError("row_idx and values must be 1-d arrays of equal length")
        if col_ptr[0] != 0 or col_ptr[-1] != row_idx.shape[0]:
            raise ValidationError("col_ptr must start at 0 and end at nnz")
        if np.any(np.diff(col_ptr) < 0):
            raise ValidationError("col_ptr must be nondecreasing")
        nnz = row_idx.shape[0]
        if nnz:
            if row_idx.min() < 0 or row_idx.max() >= nrows:
                raise ValidationError("row index out of range")
            # Row indices must strictly increase inside each column; diffs that
            # straddle a column boundary are exempt.
            gaps = np.diff(row_idx)
            boundaries = col_ptr[1:-1] - 1
            boundaries = boundaries[(boundaries >= 0) & (boundaries < nnz - 1)]
            within = np.ones(nnz - 1, dtype=bool)
            within[boundaries] = False
            if np.any(gaps[within] <= 0):
                raise ValidationError("row indices must be strictly increasing within each column")
        if not np.all(np.isfinite(values)):
            raise ValidationError("matrix values must be finite")
        self.nrows = nrows
        self.ncols = ncols
        self.col_ptr = col_ptr
        self.row_idx = row_idx
        self.values = values
        self._entry_cols = None

    @property
    def shape(self):
        return (self.nrows, self.ncols)

    @property
    def nnz(self):
        return self.values.shape[0]

    def __repr__(self):
        return f"CscMatrix(shape={self.shape}, nnz={self.nnz})"

    @classmethod
    def zeros(cls, nrows, ncols):
        """Matrix with an empty pattern."""
        return cls(nrows, ncols, np.zeros(ncols + 1, dtype=np.int64),
                   np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_dense(cls, arr):
        """CSC matrix holding exactly the nonzero entries of ``arr``."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 2:
            raise ValidationError("from_dense expects a 2-d array")
        # Nonzeros of the transpose come out sorted by column, then row.
        cols, rows = np.nonzero(arr.T)
        values = arr[rows, cols]
        col_ptr = np.zeros(arr.shape[1] + 1, dtype=np.int64)
        np.cumsum(np.bincount(cols, minlength=arr.shape[1]), out=col_ptr[1:])
        return cls(arr.shape[0], arr.shape[1], col_ptr, rows.astype(np.int64), values)

    def to_dense(self):
        out = np.zeros(self.shape)
        out[self.row_idx, self.entry_cols()] = self.values
        return out

    def entry_cols(self):
        """Column index of each stored entry, in storage order."""
        if self._entry_cols is None:
            self._entry_cols = np.repeat(np.arange(self.ncols, dtype=np.int64),
                                         np.diff(self.col_ptr))
        return self._entry_cols

    def with_values(self, values):
        """Matrix with the same pattern and new entry values."""
        return CscMatrix(self.nrows, self.ncols, self.col_ptr, self.row_idx, values)

    def matvec(self, x):
        """Return ``A @ x``."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.ncols,):
            raise ValidationError(f"matvec expects a vector of length {self.ncols}, got {x.shape}")
        return _kernels.spmv(self.nrows, self.col_ptr, self.row_idx, self.values, x)

    def rmatvec(self, y):
        """Return ``A.T @ y``."""
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (self.nrows,):
            raise ValidationError(f"rmatvec expects a vector of length {self.nrows}, got {y.shape}")
        return _kernels.spmv_adjoint(self.col_ptr, self.row_idx, self.values, y)


def same_pattern(a, b):
    """True when the two matrices share shape and sparsity pattern exactly."""
    return (a.shape == b.shape and np.array_equal(a.col_ptr, b.col_ptr)
            and np.array_equal(a.row_idx, b.row_idx))


def add_scaled(a, b, alpha=1.0):
    """Return ``a + alpha * b`` on the union of the two patterns.

    Entries are merged column by column in row order, so the result (pattern
    and values) is deterministic.  Cancellation keeps an explicit entry; the
    union pattern depends only on the operand patterns.
    """
    if a.shape != b.shape:
        raise ValidationError(f"cannot add matrices of shapes {a.shape} and {b.shape}")
    rows = np.concatenate([a.row_idx, b.row_idx])
    cols = np.concatenate([a.entry_cols(), b.entry_cols()])
    vals = np.concatenate([a.values, alpha * b.values])
    keys = cols * np.int64(max(a.nrows, 1)) + rows
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    first = np.ones(keys.shape[0], dtype=bool)
    first[1:] = keys[1:] != keys[:-1]
    starts = np.flatnonzero(first)
    if starts.size:
        merged_vals = np.add.reduceat(vals[order], starts)
        merged_rows = rows[order][starts]
        merged_cols = cols[order][starts]
    else:
        merged_vals = np.zeros(0)
        merged_rows = np.zeros(0, dtype=np.int64)
        merged_cols = np.zeros(0, dtype=np.int64)
    col_ptr = np.zeros(a.ncols + 1, dtype=np.int64)
    np.cumsum(np.bincount(merged_cols, minlength=a.ncols), out=col_ptr[1:])
    return CscMatrix(a.nrows, a.ncols, col_ptr, merged_rows, merged_vals)


def check_symmetric(mat, tol=1e-12):
    """Validate that a square matrix equals its transpose.

    The pattern must be symmetric, and paired values may differ by at most
    ``tol * max_ij |v_ij|``.  Raises :class:`ValidationError` otherwise.
    """
    if mat.nrows != mat.ncols:
        raise ValidationError(f"matrix of shape {mat.shape} cannot be symmetric")
    if mat.nnz == 0:
        return
    n = np.int64(mat.nrows)
    rows = mat.row_idx
    cols = mat.entry_cols()
    keys = cols * n + rows
    keys_t = rows * n + cols
    order = np.argsort(keys, kind="stable")
    order_t = np.argsort(keys_t, kind="stable")
    if not np.array_equal(keys[order], keys_t[order_t]):
        raise ValidationError("sparsity pattern is not symmetric")
    bound = tol * np.max(np.abs(mat.values))
    if np.any(np.abs(mat.values[order] - mat.values[order_t]) > bound):
        raise ValidationError("matrix values are not symmetric")

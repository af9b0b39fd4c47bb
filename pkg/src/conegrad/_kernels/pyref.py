"""Pure NumPy reference kernels for CSC matrix-vector products.

These mirror the compiled kernels entry for entry.  ``np.add.at`` applies
unbuffered element-wise accumulation in index order, so both kernels add the
same numbers in the same order as the compiled loops and return bit-identical
results.
"""

import numpy as np


def spmv(nrows, col_ptr, row_idx, values, x):
    """Return ``A @ x`` for a CSC matrix with the given structure arrays."""
    ncols = col_ptr.shape[0] - 1
    cols = np.repeat(np.arange(ncols), np.diff(col_ptr))
    out = np.zeros(nrows)
    np.add.at(out, row_idx, values * x[cols])
    return out


def spmv_adjoint(col_ptr, row_idx, values, y):
    """Return ``A.T @ y`` for a CSC matrix with the given structure arrays."""
    ncols = col_ptr.shape[0] - 1
    cols = np.repeat(np.arange(ncols), np.diff(col_ptr))
    out = np.zeros(ncols)
    np.add.at(out, cols, values * y[row_idx])
    return out

# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled CSC matrix-vector kernels.

Entry k of column j contributes ``values[k] * x[j]`` to row ``row_idx[k]``.
Both kernels accumulate entries in storage order (column by column, then
stored row order within each column), which makes the results deterministic
and bit-identical to the pure NumPy reference kernels in ``pyref``.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def spmv(Py_ssize_t nrows,
         cnp.int64_t[::1] col_ptr,
         cnp.int64_t[::1] row_idx,
         cnp.float64_t[::1] values,
         cnp.float64_t[::1] x):
    """Return ``A @ x`` for a CSC matrix with the given structure arrays."""
    cdef Py_ssize_t ncols = col_ptr.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(nrows)
    cdef cnp.float64_t[::1] out_view = out
    cdef Py_ssize_t j, k
    cdef cnp.float64_t xj
    for j in range(ncols):
        xj = x[j]
        for k in range(col_ptr[j], col_ptr[j + 1]):
            out_view[row_idx[k]] += values[k] * xj
    return out


def spmv_adjoint(cnp.int64_t[::1] col_ptr,
                 cnp.int64_t[::1] row_idx,
                 cnp.float64_t[::1] values,
                 cnp.float64_t[::1] y):
    """Return ``A.T @ y`` for a CSC matrix with the given structure arrays."""
    cdef Py_ssize_t ncols = col_ptr.shape[0] - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(ncols)
    cdef cnp.float64_t[::1] out_view = out
    cdef Py_ssize_t j, k
    cdef cnp.float64_t acc
    for j in range(ncols):
        acc = 0.0
        for k in range(col_ptr[j], col_ptr[j + 1]):
            acc += values[k] * y[row_idx[k]]
        out_view[j] = acc
    return out

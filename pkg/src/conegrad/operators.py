"""Matrix-free linear operators.

An operator is a pair of callables for the forward and adjoint products plus
its dimensions.  Every operator built in this package keeps the adjoint exact
(the same arithmetic transposed, not an approximation), which the test suite
checks with random inner-product probes.
"""

import numpy as np

from conegrad.errors import ValidationError


class LinearOperator:
    """Linear map ``R^in_dim -> R^out_dim`` given by product callables.

    Attributes:
        out_dim: dimension of the range.
        in_dim: dimension of the domain.
    """

    __slots__ = ("out_dim", "in_dim", "_matvec", "_rmatvec")

    def __init__(self, out_dim, in_dim, matvec, rmatvec):
        self.out_dim = int(out_dim)
        self.in_dim = int(in_dim)
        self._matvec = matvec
        self._rmatvec = rmatvec

    @property
    def shape(self):
        return (self.out_dim, self.in_dim)

    @property
    def T(self):
        """The adjoint operator, with forward and adjoint products swapped."""
        return LinearOperator(self.in_dim, self.out_dim, self._rmatvec, self._matvec)

    def matvec(self, x):
        """Apply the operator to ``x`` (length ``in_dim``)."""
        x = np.ascontiguousarray(x, dtype=np.float64)
        if x.shape != (self.in_dim,):
            raise ValidationError(f"operator expects input of length {self.in_dim}, got {x.shape}")
        return self._matvec(x)

    def rmatvec(self, y):
        """Apply the adjoint to ``y`` (length ``out_dim``)."""
        y = np.ascontiguousarray(y, dtype=np.float64)
        if y.shape != (self.out_dim,):
            raise ValidationError(f"adjoint expects input of length {self.out_dim}, got {y.shape}")
        return self._rmatvec(y)

    @classmethod
    def from_dense(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr.shape[0], arr.shape[1], lambda x: arr @ x, lambda y: arr.T @ y)

    @classmethod
    def from_csc(cls, mat):
        return cls(mat.nrows, mat.ncols, mat.matvec, mat.rmatvec)

    def to_dense(self):
        """Materialize the operator column by column (test sizes only)."""
        out = np.empty(self.shape)
        e = np.zeros(self.in_dim)
        for j in range(self.in_dim):
            e[j] = 1.0
            out[:, j] = self.matvec(e)
            e[j] = 0.0
        return out

"""Homogeneous embedding of a quadratic cone program.

The program

    minimize    (1/2) x'Px + q'x
    subject to  Ax + s = b,  s in K,

with ``P`` symmetric positive semidefinite, is folded into a single map on the
embedding space ``R^N`` with ``N = n + m + 1``.  A point ``u = (x, y, tau)``
collects the primal variable, the dual variable, and a positive homogenizing
scalar; the embedding map

    Q(u) = ( Px + A'y + tau*q,
            -Ax + tau*b,
            -(1/tau) x'Px - q'x - b'y )

vanishes exactly at (scaled) primal-dual optimal pairs.  Solutions are encoded
as fixed points of ``z -> Q(Pi z) - Pi z + z`` where ``Pi`` projects onto the
embedding cone ``C = R^n x K* x R_+``: the residual map :func:`residual` is
zero iff ``Pi z`` splits into a KKT-optimal triple.  Everything downstream
(solution derivatives, least-squares solves) is built from the derivatives of
these two ingredients, all exposed here as matrix-free products.

Conventions used throughout:

* ``theta`` is a :class:`ProblemData` holding ``(P, A, q, b)`` and the cone.
* ``u`` is a point of the embedding space with ``u[n + m] = tau > 0``.
* ``z`` is a candidate fixed point; its projection ``Pi z`` plays the role of
  ``u``.
* Perturbations of the data travel as :class:`DataPerturbation`, with ``dP``
  symmetric and ``dA`` sharing no structure requirement.
"""

import numpy as np

from conegrad import cones
from conegrad.errors import DomainError, ValidationError
from conegrad.operators import LinearOperator
from conegrad.sparse import CscMatrix, check_symmetric


def _check_vector(name, vec, length):
    vec = np.ascontiguousarray(vec, dtype=np.float64)
    if vec.shape != (length,):
        raise ValidationError(f"{name} must have shape ({length},), got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{name} contains non-finite entries")
    return vec


def _check_matrix(name, mat, nrows, ncols):
    if not isinstance(mat, CscMatrix):
        raise ValidationError(f"{name} must be a CscMatrix, got {type(mat).__name__}")
    if mat.shape != (nrows, ncols):
        raise ValidationError(f"{name} must have shape ({nrows}, {ncols}), got {mat.shape}")
    return mat


class ProblemData:
    """Immutable problem data ``(P, A, q, b)`` plus the cone ``K``.

    ``P`` must be square, symmetric (paired values within ``1e-12`` of the
    largest magnitude), and is stored with both triangles present; ``A`` is
    ``m x n``; the cone dimension must equal ``m``.  All numeric content is
    validated to be finite at construction so the maps below never have to
    re-check.
    """

    __slots__ = ("n", "m", "P", "A", "q", "b", "cone")

    def __init__(self, P, A, q, b, cone):
        if not isinstance(cone, cones.ConeSpec):
            raise ValidationError(f"cone must be a ConeSpec, got {type(cone).__name__}")
        if not isinstance(A, CscMatrix):
            raise ValidationError(f"A must be a CscMatrix, got {type(A).__name__}")
        m, n = A.shape
        self.n = n
        self.m = m
        self.P = _check_matrix("P", P, n, n)
        check_symmetric(self.P)
        self.A = A
        self.q = _check_vector("q", q, n)
        self.b = _check_vector("b", b, m)
        if cone.dim != m:
            raise ValidationError(
                f"cone dimension {cone.dim} does not match the row count {m} of A"
            )
        self.cone = cone

    @property
    def embedding_dim(self):
        """Dimension ``N = n + m + 1`` of the embedding space."""
        return self.n + self.m + 1

    def norm(self):
        """Euclidean norm of the data as a point of the data space.

        Frobenius on the matrix parts plus the vector norms, matching the
        inner product used by :class:`DataPerturbation`; tolerance scales
        throughout the package are stated relative to this.
        """
        return float(
            np.sqrt(
                self.P.values @ self.P.values
                + self.A.values @ self.A.values
                + self.q @ self.q
                + self.b @ self.b
            )
        )

    def __repr__(self):
        return (
            f"ProblemData(n={self.n}, m={self.m}, nnz_P={self.P.nnz}, "
            f"nnz_A={self.A.nnz}, blocks={len(self.cone.blocks)})"
        )


class DataPerturbation:
    """A direction ``(dP, dA, dq, db)`` in problem-data space.

    ``dP`` must be symmetric like ``P`` itself; shapes must be mutually
    consistent.  Instances are plain value holders: the inner product with
    another perturbation is the sum of the Frobenius pairings of the matrix
    parts and the dot products of the vector parts.
    """

    __slots__ = ("n", "m", "dP", "dA", "dq", "db")

    def __init__(self, dP, dA, dq, db):
        if not isinstance(dA, CscMatrix):
            raise ValidationError(f"dA must be a CscMatrix, got {type(dA).__name__}")
        m, n = dA.shape
        self.n = n
        self.m = m
        self.dP = _check_matrix("dP", dP, n, n)
        check_symmetric(self.dP)
        self.dA = dA
        self.dq = _check_vector("dq", dq, n)
        self.db = _check_vector("db", db, m)

    @classmethod
    def zeros_like(cls, theta):
        """All-zero perturbation on the sparsity patterns of ``theta``."""
        return cls(
            theta.P.with_values(np.zeros(theta.P.nnz)),
            theta.A.with_values(np.zeros(theta.A.nnz)),
            np.zeros(theta.n),
            np.zeros(theta.m),
        )

    def scaled(self, alpha):
        """The perturbation multiplied by the scalar ``alpha``."""
        alpha = float(alpha)
        return DataPerturbation(
            self.dP.with_values(alpha * self.dP.values),
            self.dA.with_values(alpha * self.dA.values),
            alpha * self.dq,
            alpha * self.db,
        )

    def dot(self, other):
        """Inner product with ``other`` (Frobenius on matrices, dot on vectors).

        The matrix parts must share sparsity patterns entry for entry.
        """
        from conegrad.sparse import same_pattern

        if not (same_pattern(self.dP, other.dP) and same_pattern(self.dA, other.dA)):
            raise ValidationError("perturbations must share sparsity patterns")
        return float(
            self.dP.values @ other.dP.values
            + self.dA.values @ other.dA.values
            + self.dq @ other.dq
            + self.db @ other.db
        )

    def norm(self):
        """Euclidean norm induced by :meth:`dot`."""
        return float(
            np.sqrt(
                self.dP.values @ self.dP.values
                + self.dA.values @ self.dA.values
                + self.dq @ self.dq
                + self.db @ self.db
            )
        )

    def __repr__(self):
        return f"DataPerturbation(n={self.n}, m={self.m}, norm={self.norm():.3e})"


def _split(theta, u, name="u"):
    u = _check_vector(name, u, theta.embedding_dim)
    n, m = theta.n, theta.m
    return u, u[:n], u[n : n + m], u[n + m]


def q_apply(theta, u):
    """Evaluate the embedding map ``Q`` at ``u = (x, y, tau)``.

    Requires ``tau > 0`` (the map divides by ``tau``).
    """
    u, x, y, tau = _split(theta, u)
    if tau <= 0.0:
        raise DomainError(f"embedding map needs tau > 0, got tau = {tau}")
    Px = theta.P.matvec(x)
    out = np.empty(theta.embedding_dim)
    out[: theta.n] = Px + theta.A.rmatvec(y) + tau * theta.q
    out[theta.n : theta.n + theta.m] = -theta.A.matvec(x) + tau * theta.b
    out[-1] = -(x @ Px) / tau - theta.q @ x - theta.b @ y
    return out


def duq_apply(theta, u, du):
    """Apply the Jacobian of ``Q`` in ``u``, at ``u``, to a direction ``du``.

    The Jacobian in block form (rows: x, y, tau components of ``Q``) is

        [      P              A'     q          ]
        [     -A              0      b          ]
        [ -(2/tau) x'P - q'  -b'     x'Px/tau^2 ]
    """
    u, x, y, tau = _split(theta, u)
    if tau <= 0.0:
        raise DomainError(f"embedding Jacobian needs tau > 0, got tau = {tau}")
    du, dx, dy, dtau = _split(theta, du, name="du")
    Px = theta.P.matvec(x)
    Pdx = theta.P.matvec(dx)
    out = np.empty(theta.embedding_dim)
    out[: theta.n] = Pdx + theta.A.rmatvec(dy) + dtau * theta.q
    out[theta.n : theta.n + theta.m] = -theta.A.matvec(dx) + dtau * theta.b
    out[-1] = (
        -(2.0 / tau) * (Px @ dx)
        - theta.q @ dx
        - theta.b @ dy
        + (x @ Px) / (tau * tau) * dtau
    )
    return out


def duq_adjoint(theta, u, w):
    """Apply the transpose of the Jacobian of ``Q`` at ``u`` to ``w``.

    Exactly the same arithmetic as :func:`duq_apply` transposed, so the
    inner-product identity ``<D_u Q du, w> = <du, D_u Q' w>`` holds to
    rounding.
    """
    u, x, y, tau = _split(theta, u)
    if tau <= 0.0:
        raise DomainError(f"embedding Jacobian needs tau > 0, got tau = {tau}")
    w, w1, w2, wN = _split(theta, w, name="w")
    Px = theta.P.matvec(x)
    out = np.empty(theta.embedding_dim)
    out[: theta.n] = (
        theta.P.matvec(w1)
        - theta.A.rmatvec(w2)
        - ((2.0 / tau) * wN) * Px
        - wN * theta.q
    )
    out[theta.n : theta.n + theta.m] = theta.A.matvec(w1) - wN * theta.b
    out[-1] = theta.q @ w1 + theta.b @ w2 + (x @ Px) / (tau * tau) * wN
    return out


def dthetaq_apply(theta, u, dtheta):
    """Directional derivative of ``Q`` in the data, at ``u``, along ``dtheta``.

    ``Q`` is affine in each of ``P``, ``A``, ``q``, ``b`` separately, so this
    is exact (no linearization error in the data direction):

        ( dP x + dA' y + tau dq,
         -dA x + tau db,
         -(1/tau) x'dP x - dq'x - db'y ).
    """
    u, x, y, tau = _split(theta, u)
    if tau <= 0.0:
        raise DomainError(f"embedding map needs tau > 0, got tau = {tau}")
    if not isinstance(dtheta, DataPerturbation):
        raise ValidationError(
            f"dtheta must be a DataPerturbation, got {type(dtheta).__name__}"
        )
    if (dtheta.n, dtheta.m) != (theta.n, theta.m):
        raise ValidationError(
            f"perturbation dimensions ({dtheta.n}, {dtheta.m}) do not match "
            f"problem dimensions ({theta.n}, {theta.m})"
        )
    dPx = dtheta.dP.matvec(x)
    out = np.empty(theta.embedding_dim)
    out[: theta.n] = dPx + dtheta.dA.rmatvec(y) + tau * dtheta.dq
    out[theta.n : theta.n + theta.m] = -dtheta.dA.matvec(x) + tau * dtheta.db
    out[-1] = -(x @ dPx) / tau - dtheta.dq @ x - dtheta.db @ y
    return out


def dthetaq_adjoint(theta, u, w, pattern_p=None, pattern_a=None):
    """Adjoint of ``dtheta -> D_theta Q(u)[dtheta]``, restricted to patterns.

    Given ``w = (w1, w2, wN)`` in the embedding space, the unrestricted
    adjoint is the dense quadruple

        P~ = (w1 x' + x w1')/2 - (wN / tau) x x'
        A~ = y w1' - w2 x'
        q~ = tau w1 - wN x
        b~ = tau w2 - wN y

    (the symmetrization of the ``P`` component reflects that the data space
    only contains symmetric ``dP``).  Materializing the matrix parts densely
    would swamp everything else, and downstream only their values on the
    sparsity patterns of the actual data are ever paired against, so this
    evaluates ``P~`` and ``A~`` at exactly the stored entries of
    ``pattern_p``/``pattern_a`` (defaulting to the patterns of ``theta``)
    and returns the result as a :class:`DataPerturbation` on those patterns.
    """
    u, x, y, tau = _split(theta, u)
    if tau <= 0.0:
        raise DomainError(f"embedding map needs tau > 0, got tau = {tau}")
    w, w1, w2, wN = _split(theta, w, name="w")
    pattern_p = theta.P if pattern_p is None else _check_matrix("pattern_p", pattern_p, theta.n, theta.n)
    pattern_a = theta.A if pattern_a is None else _check_matrix("pattern_a", pattern_a, theta.m, theta.n)

    rows = pattern_p.row_idx
    cols = pattern_p.entry_cols()
    p_vals = 0.5 * (w1[rows] * x[cols] + x[rows] * w1[cols]) - (wN / tau) * (
        x[rows] * x[cols]
    )
    rows = pattern_a.row_idx
    cols = pattern_a.entry_cols()
    a_vals = y[rows] * w1[cols] - w2[rows] * x[cols]
    return DataPerturbation(
        pattern_p.with_values(p_vals),
        pattern_a.with_values(a_vals),
        tau * w1 - wN * x,
        tau * w2 - wN * y,
    )


def _embedding_project(theta, z):
    """Projection of ``z`` onto the embedding cone ``R^n x K* x R_+``."""
    n, m = theta.n, theta.m
    out = np.empty(theta.embedding_dim)
    out[:n] = z[:n]
    out[n : n + m] = cones.project_dual(theta.cone, z[n : n + m])
    out[-1] = max(z[-1], 0.0)
    return out


class _EmbeddingDerivative:
    """Prepared derivative of the embedding-cone projection at ``z``.

    Blockwise: identity on the free ``R^n`` part, the dual-cone projection
    derivative on the middle ``m`` coordinates, and the indicator of
    ``z_N > 0`` on the last.  Self-adjoint, so one ``matvec`` serves both
    directions.  Preparing it once per point means repeated products (as in
    an iterative least-squares solve) never re-run the spectral or
    root-finding work inside the cone calculus.
    """

    __slots__ = ("n", "m", "_mid", "_last")

    def __init__(self, theta, z):
        self.n = theta.n
        self.m = theta.m
        self._mid = cones.dprojection_dual(theta.cone, z[self.n : self.n + self.m])
        self._last = 1.0 if z[-1] > 0.0 else 0.0

    def matvec(self, w):
        out = np.empty(self.n + self.m + 1)
        out[: self.n] = w[: self.n]
        out[self.n : self.n + self.m] = self._mid.matvec(w[self.n : self.n + self.m])
        out[-1] = self._last * w[-1]
        return out


def residual(theta, z):
    """The fixed-point residual ``R(z) = Q(Pi z) - Pi z + z``.

    ``Pi`` projects onto the embedding cone.  Requires the projected
    homogenizing coordinate to be strictly positive (otherwise ``Q`` is not
    defined at ``Pi z``); since that coordinate is ``max(z_N, 0)``, this
    rejects ``z_N <= 0``.
    """
    z = _check_vector("z", z, theta.embedding_dim)
    pz = _embedding_project(theta, z)
    if pz[-1] <= 0.0:
        raise DomainError(
            f"residual needs the projected tau to be positive, got z_N = {z[-1]}"
        )
    return q_apply(theta, pz) - pz + z


def normalized_residual(theta, z):
    """``R(z)`` scaled by ``1 / |z_N|``; zero exactly at solution encodings."""
    z = _check_vector("z", z, theta.embedding_dim)
    if z[-1] == 0.0:
        raise DomainError("normalized residual is undefined at z_N = 0")
    return residual(theta, z) / abs(z[-1])


def make_F(theta, z):
    """The Jacobian of the normalized residual at ``z``, as a linear operator.

    With ``Pi`` the embedding-cone projection and ``D Pi(z)`` its (prepared,
    self-adjoint) derivative,

        F w  = (1/z_N) * ( D_u Q(Pi z) [D Pi(z) w] - D Pi(z) w + w )
        F' w = (1/z_N) * ( D Pi(z) [D_u Q(Pi z)' w] - D Pi(z) w + w ).

    The projection derivative and the projected point are computed once here;
    every subsequent product is cheap (sparse matrix-vector work only), which
    is what an iterative least-squares solver needs.
    """
    z = _check_vector("z", z, theta.embedding_dim)
    if z[-1] <= 0.0:
        raise DomainError(f"Jacobian needs z_N > 0, got z_N = {z[-1]}")
    pz = _embedding_project(theta, z)
    dpi = _EmbeddingDerivative(theta, z)
    zN = z[-1]
    N = theta.embedding_dim

    def matvec(w):
        v = dpi.matvec(w)
        return (duq_apply(theta, pz, v) - v + w) / zN

    def rmatvec(w):
        return (dpi.matvec(duq_adjoint(theta, pz, w)) - dpi.matvec(w) + w) / zN

    return LinearOperator(N, N, matvec, rmatvec)

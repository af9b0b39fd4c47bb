"""Deterministic problem synthesis and derivative oracles for testing.

Everything here exists to answer one question from the outside: is a
computed solution-map derivative right?  The module builds cone programs
whose solutions are known exactly by construction (:func:`generate`),
produces reference derivatives along three independent routes — an
analytic solution path (:func:`analytic_path`), central finite differences
around a Gauss-Newton re-solve (:func:`fd_jvp` / :func:`refine`), and a
dense KKT solve for the equality-constrained case (:func:`dense_kkt_jvp`)
— and pins every random choice to a small, fully specified generator so
that independent implementations given the same configuration produce
bit-identical instances.

Reproducibility contract
------------------------
Random numbers come from :class:`SplitMix64`, whose exact update rule and
output transforms are documented on the class.  :func:`generate` consumes
the stream in this order (all matrices column-major):

1. constraint-matrix pattern: for each column ``j`` and each row ``i``
   (rows inner, both ascending), one uniform draw; the entry is stored
   iff ``u < density``;
2. constraint-matrix values: one normal draw times ``scale`` per stored
   entry, in the same order;
3. an ``n`` by ``n`` factor matrix ``M``, same two phases;
4. no draws: ``P = M^T M + eps*I`` with ``eps = 1e-3 * scale``, entry
   ``(i, j)`` stored iff columns ``i`` and ``j`` of ``M`` share a stored
   row or ``i == j``, its value the exactly rounded sum
   (:func:`math.fsum`) of the shared products, plus ``eps`` on the
   diagonal;
5. primal point ``x``: ``n`` normal draws times ``scale``;
6. cone point ``w``: for each cone block in order, block-dimension normal
   draws times ``scale``; a block that fails the differentiability margin
   test below is redrawn in full (up to 100 tries).

The solution and the remaining data follow without further draws:
``s = proj_K(w)``, ``y = s - w`` (so ``s`` and ``y`` are complementary by
construction), ``b = A x + s`` and ``q = -(P x + A^T y)``, with the sparse
matrix-vector products accumulated per stored entry in column-major
order.  Both KKT equalities then cancel bitwise, so the pair passes an
optimality check at any reasonable tolerance.

Margin test: derivatives of the cone projections exist only away from
certain boundary strata, and the oracles need room around the generated
point.  With ``t = margin * (1 + ||w_block||)``, a block is accepted when

- zero: always;
- nonneg: every ``|w_i| >= t``;
- second-order: ``| ||w_tail|| - w_0 | >= t`` and ``| ||w_tail|| + w_0 |
  >= t``;
- semidefinite: every eigenvalue of the symmetric matrix satisfies
  ``|lambda_i| >= t``;
- exponential and power families: the prepared derivative of the dual
  projection at ``-w_block`` exists and, probed at the six points
  ``-w_block + t * d`` for ``d`` in ``+-e_1``, ``+-(1,..,1)/sqrt(dim)``
  and ``+-(1,-1,1,..)/sqrt(dim)``, never moves by more than
  ``0.03 * (1 + ||D||_F)`` in Frobenius norm (a branch crossing moves it
  by an amount independent of ``t``; smooth curvature moves it by
  ``O(t)``).
"""

import math

import numpy as np

from conegrad import cones
from conegrad.embedding import (
    DataPerturbation,
    ProblemData,
    normalized_residual,
    make_F,
)
from conegrad.errors import ConegradError, NumericalError, ValidationError
from conegrad.lsmr import lsmr
from conegrad.operators import LinearOperator
from conegrad.solution_map import Solution, SolutionDelta, embed, phi
from conegrad.sparse import CscMatrix, add_scaled

__all__ = [
    "SplitMix64",
    "GeneratorConfig",
    "generate",
    "analytic_path",
    "refine",
    "fd_jvp",
    "dense_kkt_jvp",
]

_MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


class SplitMix64:
    """Reference 64-bit generator behind all synthesized instances.

    State update and output (all arithmetic modulo ``2**64``)::

        state += 0x9E3779B97F4A7C15
        z = state
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB
        return z ^ (z >> 31)

    Derived draws are fixed functions of the raw stream so that any
    implementation of the same recurrence reproduces them bit for bit:

    - ``uniform()`` is ``(next_uint64() >> 11) * 2**-53``, in ``[0, 1)``;
    - ``normal()`` draws uniforms ``u1`` then ``u2`` and returns
      ``sqrt(-2*log1p(-u1)) * cos(2*pi*u2)``.  Every call consumes
      exactly two raw draws; the paired sine variate is never used, so
      the generator carries no hidden state.

    The raw stream and the uniforms are integer-exact.  The normal
    transform leans on ``log1p``, ``sqrt`` and ``cos``, so two builds
    agree bit for bit exactly when their math libraries round those the
    same way — true in practice across mainstream platforms, and the
    reason the transform is pinned to this one formula.
    """

    __slots__ = ("_state",)

    def __init__(self, seed):
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {seed!r}")
        if not 0 <= seed <= _MASK64:
            raise ValidationError(f"seed must lie in [0, 2**64), got {seed}")
        self._state = int(seed)

    def next_uint64(self):
        """Advance the state and return the next raw 64-bit output."""
        self._state = (self._state + _GAMMA) & _MASK64
        z = self._state
        z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
        return z ^ (z >> 31)

    def uniform(self):
        """Next double in ``[0, 1)``, from the top 53 bits of one draw."""
        return (self.next_uint64() >> 11) * 2.0**-53

    def normal(self):
        """Next standard normal variate (two raw draws per call)."""
        u1 = self.uniform()
        u2 = self.uniform()
        return math.sqrt(-2.0 * math.log1p(-u1)) * math.cos(2.0 * math.pi * u2)

    def normals(self, count, scale=1.0):
        """Array of ``count`` normal draws, each times ``scale``."""
        return np.array([scale * self.normal() for _ in range(count)])


class GeneratorConfig:
    """Parameters pinning one synthetic problem instance.

    ``m`` must equal the total cone dimension, and ``density * n * m``
    must be at least ``m`` so the constraint matrix carries roughly one
    entry per row on average.
    """

    __slots__ = ("seed", "n", "m", "cone", "density", "scale")

    def __init__(self, seed, n, m, cone, density=0.3, scale=1.0):
        if isinstance(seed, bool) or not isinstance(seed, (int, np.integer)):
            raise ValidationError(f"seed must be an integer, got {seed!r}")
        if not 0 <= seed <= _MASK64:
            raise ValidationError(f"seed must lie in [0, 2**64), got {seed}")
        if not isinstance(n, (int, np.integer)) or n < 1:
            raise ValidationError(f"n must be a positive integer, got {n!r}")
        if not isinstance(m, (int, np.integer)) or m < 1:
            raise ValidationError(f"m must be a positive integer, got {m!r}")
        if not isinstance(cone, cones.ConeSpec):
            raise ValidationError("cone must be a ConeSpec")
        if m != cone.dim:
            raise ValidationError(
                f"m = {m} does not match the total cone dimension {cone.dim}")
        density = float(density)
        if not 0.0 < density <= 1.0:
            raise ValidationError(f"density must lie in (0, 1], got {density}")
        scale = float(scale)
        if not (np.isfinite(scale) and scale > 0.0):
            raise ValidationError(f"scale must be a positive real, got {scale}")
        if density * n * m < m:
            raise ValidationError(
                f"density {density} with n = {n} leaves fewer than one expected "
                "nonzero per constraint row; density * n * m must be at least m")
        self.seed = int(seed)
        self.n = int(n)
        self.m = int(m)
        self.cone = cone
        self.density = density
        self.scale = scale

    def __repr__(self):
        return (f"GeneratorConfig(seed={self.seed}, n={self.n}, m={self.m}, "
                f"cone={self.cone!r}, density={self.density}, scale={self.scale})")


# ---------------------------------------------------------------------------
# sampling pieces
# ---------------------------------------------------------------------------


def _sparse_gaussian(rng, nrows, ncols, density, scale):
    """Bernoulli-pattern matrix with normal values, in documented order."""
    col_ptr = np.zeros(ncols + 1, dtype=np.int64)
    row_idx = []
    for j in range(ncols):
        for i in range(nrows):
            if rng.uniform() < density:
                row_idx.append(i)
        col_ptr[j + 1] = len(row_idx)
    row_idx = np.array(row_idx, dtype=np.int64)
    values = rng.normals(row_idx.size, scale)
    return CscMatrix(nrows, ncols, col_ptr, row_idx, values)


def _gram_plus_ridge(M, eps):
    """``M^T M + eps*I`` on the structural pattern, with exact sums.

    Entry ``(i, j)`` is stored iff columns ``i`` and ``j`` of ``M`` share
    a stored row index or ``i == j``; its value is the exactly rounded
    sum of the shared products (so the result does not depend on
    accumulation order), plus ``eps`` on the diagonal.
    """
    n = M.ncols
    supports = [M.row_idx[M.col_ptr[j]:M.col_ptr[j + 1]] for j in range(n)]
    columns = [M.values[M.col_ptr[j]:M.col_ptr[j + 1]] for j in range(n)]
    col_ptr = np.zeros(n + 1, dtype=np.int64)
    row_idx = []
    values = []
    for j in range(n):
        for i in range(n):
            common, ia, ib = np.intersect1d(
                supports[i], supports[j], assume_unique=True, return_indices=True)
            if common.size == 0 and i != j:
                continue
            value = math.fsum(columns[i][ia] * columns[j][ib])
            if i == j:
                value += eps
            row_idx.append(i)
            values.append(value)
        col_ptr[j + 1] = len(row_idx)
    return CscMatrix(n, n, col_ptr,
                     np.array(row_idx, dtype=np.int64), np.array(values))


def _probe_directions(dim):
    probes = np.zeros((6, dim))
    probes[0, 0] = 1.0
    probes[1, 0] = -1.0
    probes[2] = 1.0 / math.sqrt(dim)
    probes[3] = -probes[2]
    probes[4] = np.where(np.arange(dim) % 2 == 0, 1.0, -1.0) / math.sqrt(dim)
    probes[5] = -probes[4]
    return probes


def _derivative_matrix(spec, v):
    deriv = cones.dprojection_dual(spec, v)
    out = np.empty((spec.dim, spec.dim))
    for k in range(spec.dim):
        basis = np.zeros(spec.dim)
        basis[k] = 1.0
        out[:, k] = deriv.matvec(basis)
    return out


def _stable_block(block, w, margin):
    """Whether the dual projection is stably differentiable at ``-w``.

    Implements the margin test from the module docstring: exact distance
    formulas where the nondifferentiability strata are simple, and a fixed
    six-point derivative probe for the exponential and power families.
    """
    w = np.asarray(w, dtype=np.float64)
    t = margin * (1.0 + np.linalg.norm(w))
    if block.kind == cones.ZERO:
        return True
    if block.kind == cones.NONNEG:
        return bool(np.min(np.abs(w)) >= t)
    if block.kind == cones.SOC:
        tail = np.linalg.norm(w[1:])
        return bool(abs(tail - w[0]) >= t and abs(tail + w[0]) >= t)
    if block.kind == cones.PSD:
        eigs = np.linalg.eigvalsh(cones.smat(w, block.order))
        return bool(np.min(np.abs(eigs)) >= t)
    spec = cones.ConeSpec([block])
    base = -w
    try:
        reference = _derivative_matrix(spec, base)
        threshold = 0.03 * (1.0 + np.linalg.norm(reference))
        for probe in _probe_directions(block.dim):
            moved = _derivative_matrix(spec, base + t * probe)
            if np.linalg.norm(moved - reference) > threshold:
                return False
    except ConegradError:
        return False
    return True


def _sample_cone_point(rng, cone, scale, margin):
    w = np.empty(cone.dim)
    for index, (block, start, stop) in enumerate(cone.slices()):
        for attempt in range(100):
            candidate = rng.normals(block.dim, scale)
            if _stable_block(block, candidate, margin):
                break
        else:
            raise NumericalError(
                f"cone block {index} ({block.kind}): no stably differentiable "
                f"point found in 100 draws at margin {margin:g}")
        w[start:stop] = candidate
    return w


def _generate(rng, cfg, margin):
    A = _sparse_gaussian(rng, cfg.m, cfg.n, cfg.density, cfg.scale)
    M = _sparse_gaussian(rng, cfg.n, cfg.n, cfg.density, cfg.scale)
    P = _gram_plus_ridge(M, 1e-3 * cfg.scale)
    x = rng.normals(cfg.n, cfg.scale)
    w = _sample_cone_point(rng, cfg.cone, cfg.scale, margin)
    s = cones.project(cfg.cone, w)
    y = s - w
    b = A.matvec(x) + s
    q = -(P.matvec(x) + A.rmatvec(y))
    return ProblemData(P, A, q, b, cfg.cone), Solution(x, y, s)


def generate(cfg, *, margin=1e-6):
    """Synthesize a problem together with an exact solution.

    The primal-dual pair is built backwards from a random cone point:
    projection supplies complementary ``s`` and ``y``, and the linear data
    ``b`` and ``q`` are chosen to satisfy the two KKT equalities exactly.
    ``margin`` controls the differentiability test that triggers
    redrawing a cone block (see the module docstring); the derivative
    oracles rely on it.
    """
    if not isinstance(cfg, GeneratorConfig):
        raise ValidationError("cfg must be a GeneratorConfig")
    return _generate(SplitMix64(cfg.seed), cfg, margin)


def _zero_values(mat):
    return mat.with_values(np.zeros(mat.nnz))


def analytic_path(cfg, mode, *, direction=None, margin=1e-6):
    """A generated instance plus a data direction with known derivative.

    Returns ``(theta, sol, dtheta, expected)`` where ``expected`` is the
    derivative of the solution map at ``theta`` along ``dtheta``:

    - ``"vary_x"``: move the primal point, ``x(t) = x + t*dx`` with ``y``
      and ``s`` fixed; restoring the KKT equalities forces
      ``dq = -P dx`` and ``db = A dx``, so the solution path has
      derivative ``(dx, 0, 0)``.  ``dx`` is drawn from the generator
      stream right after the instance (``n`` normal draws times scale)
      unless ``direction`` overrides it.
    - ``"vary_scale_y"``: scale the dual point, ``y(t) = (1 + t)*y`` with
      ``x`` and ``s`` fixed (complementarity is preserved since
      ``s^T y = 0``); this forces ``dq = -A^T y`` with ``b`` unchanged,
      and the path derivative is ``(0, y, 0)``.

    Both paths stay inside the cones for small ``t``, so ``expected`` is
    the true derivative whenever the instance has an isolated, stably
    differentiable solution — which is what the generator aims for and
    the configurations used by the tests provide.
    """
    if not isinstance(cfg, GeneratorConfig):
        raise ValidationError("cfg must be a GeneratorConfig")
    if mode not in ("vary_x", "vary_scale_y"):
        raise ValidationError(
            f"unknown mode {mode!r}; expected 'vary_x' or 'vary_scale_y'")
    rng = SplitMix64(cfg.seed)
    theta, sol = _generate(rng, cfg, margin)
    if mode == "vary_x":
        if direction is None:
            direction = rng.normals(cfg.n, cfg.scale)
        else:
            direction = np.ascontiguousarray(direction, dtype=np.float64)
            if direction.shape != (cfg.n,):
                raise ValidationError(
                    f"direction must have length {cfg.n}, got {direction.shape}")
            if not np.all(np.isfinite(direction)):
                raise ValidationError("direction contains non-finite entries")
        dtheta = DataPerturbation(
            _zero_values(theta.P), _zero_values(theta.A),
            -theta.P.matvec(direction), theta.A.matvec(direction))
        expected = SolutionDelta(
            direction.copy(), np.zeros(cfg.m), np.zeros(cfg.m))
    else:
        if direction is not None:
            raise ValidationError("direction applies to mode 'vary_x' only")
        dtheta = DataPerturbation(
            _zero_values(theta.P), _zero_values(theta.A),
            -theta.A.rmatvec(sol.y), np.zeros(cfg.m))
        expected = SolutionDelta(
            np.zeros(cfg.n), sol.y.copy(), np.zeros(cfg.m))
    return theta, sol, dtheta, expected


# ---------------------------------------------------------------------------
# re-solving and derivative oracles
# ---------------------------------------------------------------------------


def refine(theta, z0, tol=1e-10, max_iter=50):
    """Drive the normalized residual to ``tol`` from a warm start.

    Gauss-Newton iteration: each step solves the least-squares model
    ``min ||J d + N(z)||`` with the full Jacobian of the normalized
    residual, then applies a halving line search on ``||N||``.  The
    normalization term of ``J`` matters here: without it the model is
    solved exactly by the pure rescaling direction ``-z``, along which
    the true residual is constant by scale invariance, so iterating from
    a poor start would stall.  Raises :class:`NumericalError` when the
    line search fails to reduce the residual over 30 halvings
    (stagnation) or when ``max_iter`` steps leave the residual above
    ``tol``; silent inaccuracy would poison the finite-difference oracle
    built on top.
    """
    if not isinstance(theta, ProblemData):
        raise ValidationError("theta must be a ProblemData")
    z = np.ascontiguousarray(z0, dtype=np.float64).copy()
    if z.shape != (theta.embedding_dim,):
        raise ValidationError(
            f"z0 must have length {theta.embedding_dim}, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("z0 contains non-finite entries")
    dim = theta.embedding_dim
    residual = normalized_residual(theta, z)
    residual_norm = np.linalg.norm(residual)
    for _ in range(max_iter):
        if residual_norm <= tol:
            return z
        F = make_F(theta, z)
        # d/dz [R(z)/|z_N|] = F - N(z) e_N' / z_N as a rank-one update
        scaled = residual / z[-1]

        def matvec(dz, F=F, scaled=scaled):
            out = F.matvec(dz)
            out -= scaled * dz[-1]
            return out

        def rmatvec(w, F=F, scaled=scaled):
            out = F.rmatvec(w)
            out[-1] -= scaled @ w
            return out

        jacobian = LinearOperator(dim, dim, matvec, rmatvec)
        step = lsmr(jacobian, -residual, atol=1e-12, btol=1e-12).solution
        size = 1.0
        for _ in range(30):
            trial = z + size * step
            try:
                trial_residual = normalized_residual(theta, trial)
            except ConegradError:
                size *= 0.5
                continue
            trial_norm = np.linalg.norm(trial_residual)
            if trial_norm < residual_norm:
                break
            size *= 0.5
        else:
            raise NumericalError(
                f"line search stagnated: residual {residual_norm:.3e} "
                "not reduced over 30 halvings")
        z, residual, residual_norm = trial, trial_residual, trial_norm
    if residual_norm <= tol:
        return z
    raise NumericalError(
        f"residual {residual_norm:.3e} still above tolerance {tol:g} "
        f"after {max_iter} iterations")


def _shifted(theta, dtheta, t):
    return ProblemData(
        add_scaled(theta.P, dtheta.dP, t), add_scaled(theta.A, dtheta.dA, t),
        theta.q + t * dtheta.dq, theta.b + t * dtheta.db, theta.cone)


def fd_jvp(theta, sol, dtheta, h=1e-6, *, tol=1e-11, max_iter=50):
    """Central-difference directional derivative of the solution map.

    Re-solves the problem at ``theta + h*dtheta`` and ``theta -
    h*dtheta`` with :func:`refine`, warm-started from the embedding of
    ``sol``, and differences the decoded solutions.  ``tol`` and
    ``max_iter`` are passed to the refiner; its failures propagate.
    """
    if not isinstance(theta, ProblemData):
        raise ValidationError("theta must be a ProblemData")
    if not isinstance(sol, Solution):
        raise ValidationError("sol must be a Solution")
    if not isinstance(dtheta, DataPerturbation):
        raise ValidationError("dtheta must be a DataPerturbation")
    if (dtheta.n, dtheta.m) != (theta.n, theta.m):
        raise ValidationError(
            f"perturbation dimensions ({dtheta.n}, {dtheta.m}) do not match "
            f"problem dimensions ({theta.n}, {theta.m})")
    h = float(h)
    if not (np.isfinite(h) and h > 0.0):
        raise ValidationError(f"h must be a positive real, got {h}")
    z0 = embed(sol)
    plus = _shifted(theta, dtheta, h)
    minus = _shifted(theta, dtheta, -h)
    ahead = phi(plus, refine(plus, z0, tol=tol, max_iter=max_iter))
    behind = phi(minus, refine(minus, z0, tol=tol, max_iter=max_iter))
    factor = 0.5 / h
    return SolutionDelta(
        factor * (ahead.x - behind.x),
        factor * (ahead.y - behind.y),
        factor * (ahead.s - behind.s))


def dense_kkt_jvp(theta, sol, dtheta):
    """Directional derivative by a dense linear solve (all-zero cone only).

    With every cone block of kind zero the optimality system is the
    linear system ``A x = b``, ``P x + A^T y = -q`` with ``s = 0``, and
    the derivative solves the same system differentiated in the data:
    ``[[P, A^T], [A, 0]] (dx, dy) = (-dP x - dA^T y - dq, db - dA x)``
    with ``ds = 0``.
    """
    if not isinstance(theta, ProblemData):
        raise ValidationError("theta must be a ProblemData")
    if not isinstance(sol, Solution):
        raise ValidationError("sol must be a Solution")
    if not isinstance(dtheta, DataPerturbation):
        raise ValidationError("dtheta must be a DataPerturbation")
    if (dtheta.n, dtheta.m) != (theta.n, theta.m):
        raise ValidationError(
            f"perturbation dimensions ({dtheta.n}, {dtheta.m}) do not match "
            f"problem dimensions ({theta.n}, {theta.m})")
    if any(block.kind != cones.ZERO for block in theta.cone.blocks):
        raise ValidationError(
            "the dense KKT route requires every cone block to be of kind zero")
    n, m = theta.n, theta.m
    kkt = np.zeros((n + m, n + m))
    dense_a = theta.A.to_dense()
    kkt[:n, :n] = theta.P.to_dense()
    kkt[:n, n:] = dense_a.T
    kkt[n:, :n] = dense_a
    rhs = np.concatenate([
        -dtheta.dP.matvec(sol.x) - dtheta.dA.rmatvec(sol.y) - dtheta.dq,
        dtheta.db - dtheta.dA.matvec(sol.x)])
    try:
        step = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"singular KKT matrix: {exc}") from exc
    return SolutionDelta(step[:n], step[n:], np.zeros(m))

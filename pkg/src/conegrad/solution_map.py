"""Derivatives of the solution map of a quadratic cone program.

The solution map sends problem data ``theta = (P, A, q, b)`` to a primal-dual
solution ``(x, y, s)``.  This module provides its directional derivative
(:func:`jvp`) and the adjoint of that derivative (:func:`vjp`), the two
operations everything else in the package exists to support.

Both run the same three-stage pipeline, forwards or backwards:

1. encode the solution as a normalized fixed point ``z = (x, y - s, 1)`` of
   the embedding residual (:func:`embed`), with :func:`phi` as the decoding
   inverse;
2. solve a least-squares system with the residual Jacobian ``F`` from
   :func:`conegrad.embedding.make_F` (iteratively, matrix-free);
3. translate between embedding-space and solution-space (or data-space)
   directions with the derivative of ``phi`` and the data-side adjoint.

Solutions are assumed optimal; a KKT pre-check (:func:`check_solution`)
guards against garbage input and can be switched off.  The least-squares
solve never claims more than it achieves: diagnostics carry the iteration
count, the final residual, and a ``derivative_unreliable`` flag for rank
deficiency, rather than failing.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from conegrad import cones
from conegrad.embedding import (
    _embedding_project,
    dthetaq_adjoint,
    dthetaq_apply,
    make_F,
)
from conegrad.errors import DomainError, ValidationError
from conegrad.lsmr import lsmr


def _vector(name, vec, length=None):
    vec = np.ascontiguousarray(vec, dtype=np.float64)
    if vec.ndim != 1 or (length is not None and vec.shape != (length,)):
        raise ValidationError(f"{name} must be a vector of length {length}, got {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise ValidationError(f"{name} contains non-finite entries")
    return vec


class Solution:
    """A primal-dual solution ``(x, y, s)`` of the cone program.

    ``x`` is the primal variable, ``y`` the dual variable, and ``s`` the
    primal slack; ``y`` and ``s`` share the cone dimension.  Optimality is
    not checked here — :func:`check_solution` reports the KKT residuals, and
    :func:`jvp`/:func:`vjp` run that check by default before differentiating.
    """

    __slots__ = ("x", "y", "s")

    def __init__(self, x, y, s):
        self.x = _vector("x", x)
        self.y = _vector("y", y)
        self.s = _vector("s", s, length=len(self.y))

    @property
    def n(self):
        return len(self.x)

    @property
    def m(self):
        return len(self.y)

    def __repr__(self):
        return f"Solution(n={self.n}, m={self.m})"


class SolutionDelta:
    """A direction ``(dx, dy, ds)`` in solution space."""

    __slots__ = ("dx", "dy", "ds")

    def __init__(self, dx, dy, ds):
        self.dx = _vector("dx", dx)
        self.dy = _vector("dy", dy)
        self.ds = _vector("ds", ds, length=len(self.dy))

    def dot(self, other):
        """Euclidean inner product with another delta."""
        return float(self.dx @ other.dx + self.dy @ other.dy + self.ds @ other.ds)

    def norm(self):
        return float(np.sqrt(self.dot(self)))

    def __repr__(self):
        return f"SolutionDelta(n={len(self.dx)}, m={len(self.dy)}, norm={self.norm():.3e})"


@dataclass
class KktReport:
    """The five optimality residuals of a candidate solution.

    ``primal`` is ``||Ax + s - b||``, ``stationarity`` is
    ``||Px + A'y + q||``, ``gap`` is ``|s'y|``, and the two cone distances
    measure how far ``s`` and ``y`` are from the cone and its dual
    (projection round trips).  ``ok`` is true when every residual is within
    ``tol``.
    """

    primal: float
    stationarity: float
    gap: float
    primal_cone_distance: float
    dual_cone_distance: float
    tol: float
    ok: bool

    def max_violation(self):
        return max(
            self.primal,
            self.stationarity,
            self.gap,
            self.primal_cone_distance,
            self.dual_cone_distance,
        )

    def as_dict(self):
        return {
            "primal": self.primal,
            "stationarity": self.stationarity,
            "gap": self.gap,
            "primal_cone_distance": self.primal_cone_distance,
            "dual_cone_distance": self.dual_cone_distance,
            "tol": self.tol,
            "ok": self.ok,
        }


@dataclass
class Diagnostics:
    """What actually happened inside a :func:`jvp` or :func:`vjp` call.

    ``iterations``/``converged``/``residual_norm`` come from the
    least-squares solve; ``rhs_norm`` is the norm of its right-hand side.
    ``derivative_unreliable`` is set when the final residual exceeds
    ``1e-6 * rhs_norm`` — the least-squares problem then has no accurate
    solution (a rank-deficient Jacobian, typically at a degenerate solution)
    and the returned direction should not be trusted.  ``kkt`` is the
    pre-check report, or ``None`` when the check was disabled.
    """

    iterations: int
    converged: bool
    residual_norm: float
    rhs_norm: float
    derivative_unreliable: bool
    kkt: Optional[KktReport]

    def as_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residual_norm": self.residual_norm,
            "rhs_norm": self.rhs_norm,
            "derivative_unreliable": self.derivative_unreliable,
            "kkt": None if self.kkt is None else self.kkt.as_dict(),
        }


def embed(sol):
    """Encode a solution as the normalized embedding point ``(x, y - s, 1)``.

    The middle block carries the complementary pair ``(s, y)`` as the single
    vector ``y - s``: projecting it onto the dual cone recovers ``y``, and
    the projection residual recovers ``s`` (Moreau decomposition, exact for
    complementary pairs).  The last coordinate is exactly 1, which the
    derivative formulas below rely on.
    """
    return np.concatenate([sol.x, sol.y - sol.s, [1.0]])


def phi(theta, z):
    """Decode an embedding point into a :class:`Solution`.

    With ``p`` the dual-cone projection of the middle block,
    ``phi(z) = (z_{1:n}, p, p - z_mid) / z_N``; requires ``z_N > 0``.
    """
    z = _vector("z", z, theta.embedding_dim)
    zN = z[-1]
    if zN <= 0.0:
        raise DomainError(f"decoding needs z_N > 0, got {zN}")
    mid = z[theta.n : -1]
    proj = cones.project_dual(theta.cone, mid)
    return Solution(z[: theta.n] / zN, proj / zN, (proj - mid) / zN)


def _require_normalized(z, theta):
    z = _vector("z", z, theta.embedding_dim)
    if z[-1] != 1.0:
        raise DomainError(
            f"derivative formulas require the normalized embedding z_N = 1, got {z[-1]}"
        )
    return z


def dphi_apply(theta, z, dz):
    """Derivative of :func:`phi` at a normalized ``z``, applied to ``dz``.

    The quotient rule contributes ``-dz_N * (x, y, s)`` on top of the
    blockwise projection derivative; at ``z_N = 1`` nothing else survives:

        dx = dz_{1:n} - dz_N * x
        dy = D[dz_mid] - dz_N * y
        ds = D[dz_mid] - dz_mid - dz_N * s

    with ``D`` the dual-projection derivative at the middle block.
    """
    z = _require_normalized(z, theta)
    dz = _vector("dz", dz, theta.embedding_dim)
    n = theta.n
    mid = z[n:-1]
    proj = cones.project_dual(theta.cone, mid)
    x, y, s = z[:n], proj, proj - mid
    deriv = cones.dprojection_dual(theta.cone, mid)
    dmid = deriv.matvec(dz[n:-1])
    dzN = dz[-1]
    return SolutionDelta(
        dz[:n] - dzN * x,
        dmid - dzN * y,
        dmid - dz[n:-1] - dzN * s,
    )


def dphi_adjoint(theta, z, delta):
    """Adjoint of :func:`dphi_apply` at a normalized ``z``.

    Exploits the self-adjointness of the projection derivative:

        out_{1:n} = dx
        out_mid   = D[dy + ds] - ds
        out_N     = -x'dx - y'dy - s'ds.
    """
    z = _require_normalized(z, theta)
    if not isinstance(delta, SolutionDelta):
        raise ValidationError(f"delta must be a SolutionDelta, got {type(delta).__name__}")
    if (len(delta.dx), len(delta.dy)) != (theta.n, theta.m):
        raise ValidationError(
            f"delta dimensions ({len(delta.dx)}, {len(delta.dy)}) do not match "
            f"problem dimensions ({theta.n}, {theta.m})"
        )
    n = theta.n
    mid = z[n:-1]
    proj = cones.project_dual(theta.cone, mid)
    x, y, s = z[:n], proj, proj - mid
    deriv = cones.dprojection_dual(theta.cone, mid)
    out = np.empty(theta.embedding_dim)
    out[:n] = delta.dx
    out[n:-1] = deriv.matvec(delta.dy + delta.ds) - delta.ds
    out[-1] = -(x @ delta.dx) - y @ delta.dy - s @ delta.ds
    return out


def check_solution(theta, sol, tol=None):
    """Report the KKT residuals of ``sol`` for the problem ``theta``.

    ``tol`` defaults to ``1e-6 * (1 + ||theta||)``.  Never raises on a bad
    solution — inspect ``report.ok``.
    """
    if not isinstance(sol, Solution):
        raise ValidationError(f"sol must be a Solution, got {type(sol).__name__}")
    if (sol.n, sol.m) != (theta.n, theta.m):
        raise ValidationError(
            f"solution dimensions ({sol.n}, {sol.m}) do not match "
            f"problem dimensions ({theta.n}, {theta.m})"
        )
    if tol is None:
        tol = 1e-6 * (1.0 + theta.norm())
    tol = float(tol)
    x, y, s = sol.x, sol.y, sol.s
    primal = float(np.linalg.norm(theta.A.matvec(x) + s - theta.b))
    stationarity = float(
        np.linalg.norm(theta.P.matvec(x) + theta.A.rmatvec(y) + theta.q)
    )
    gap = float(abs(s @ y))
    s_dist = float(np.linalg.norm(s - cones.project(theta.cone, s)))
    y_dist = float(np.linalg.norm(y - cones.project_dual(theta.cone, y)))
    ok = max(primal, stationarity, gap, s_dist, y_dist) <= tol
    return KktReport(primal, stationarity, gap, s_dist, y_dist, tol, ok)


def _precheck(theta, sol, check, check_tol):
    if not check:
        if not isinstance(sol, Solution):
            raise ValidationError(f"sol must be a Solution, got {type(sol).__name__}")
        if (sol.n, sol.m) != (theta.n, theta.m):
            raise ValidationError(
                f"solution dimensions ({sol.n}, {sol.m}) do not match "
                f"problem dimensions ({theta.n}, {theta.m})"
            )
        return None
    report = check_solution(theta, sol, check_tol)
    if not report.ok:
        exc = ValidationError(
            "solution fails the optimality pre-check: "
            f"max violation {report.max_violation():.3e} > tolerance {report.tol:.3e} "
            "(pass check=False to differentiate anyway)"
        )
        exc.kkt = report
        raise exc
    return report


def _diagnostics(result, rhs_norm, report):
    unreliable = result.residual_norm > 1e-6 * rhs_norm
    return Diagnostics(
        iterations=result.iterations,
        converged=result.converged,
        residual_norm=float(result.residual_norm),
        rhs_norm=float(rhs_norm),
        derivative_unreliable=bool(unreliable),
        kkt=report,
    )


def jvp(
    theta,
    sol,
    dtheta,
    *,
    atol=1e-10,
    btol=1e-10,
    max_iter=None,
    check=True,
    check_tol=None,
):
    """Directional derivative of the solution map along ``dtheta``.

    Encodes ``sol`` as ``z``, forms the data-direction derivative of the
    normalized residual as the right-hand side, solves the least-squares
    system ``min ||F dz + rhs||`` with the residual Jacobian, and decodes
    ``dz`` through the derivative of :func:`phi`.  Returns
    ``(SolutionDelta, Diagnostics)``.

    ``atol``/``btol``/``max_iter`` are passed to the least-squares solver;
    ``check``/``check_tol`` control the KKT pre-check.  A non-convergent
    solve is reported in the diagnostics, not raised.
    """
    report = _precheck(theta, sol, check, check_tol)
    z = embed(sol)
    u = _embedding_project(theta, z)
    rhs = -dthetaq_apply(theta, u, dtheta) / abs(z[-1])
    F = make_F(theta, z)
    result = lsmr(F, rhs, atol=atol, btol=btol, max_iter=max_iter)
    delta = dphi_apply(theta, z, result.solution)
    return delta, _diagnostics(result, np.linalg.norm(rhs), report)


def vjp(
    theta,
    sol,
    delta,
    *,
    atol=1e-10,
    btol=1e-10,
    max_iter=None,
    check=True,
    check_tol=None,
):
    """Adjoint of the solution-map derivative, applied to ``delta``.

    Pulls ``delta`` back through the decoding derivative, solves the
    transposed least-squares system ``min ||F' w + dz||``, and maps ``w``
    to data space restricted to the sparsity patterns of ``P`` and ``A``
    (gradients with respect to entries outside the patterns are discarded,
    matching how sparse problem data is actually stored and updated).
    Returns ``(DataPerturbation, Diagnostics)``.
    """
    report = _precheck(theta, sol, check, check_tol)
    z = embed(sol)
    dz = dphi_adjoint(theta, z, delta)
    F = make_F(theta, z)
    result = lsmr(F.T, -dz, atol=atol, btol=btol, max_iter=max_iter)
    u = _embedding_project(theta, z)
    grad = dthetaq_adjoint(theta, u, result.solution).scaled(1.0 / abs(z[-1]))
    return grad, _diagnostics(result, np.linalg.norm(dz), report)

"""Projections onto products of standard cones, and their derivatives.

Supported block kinds: zero cone, nonnegative orthant, second-order cone,
positive semidefinite cone (svec storage), exponential cone, power cone,
and the duals of the last two.  A product cone is described by a
:class:`ConeSpec`, whose blocks must appear in the canonical kind order.

Projections onto dual cones use the Moreau decomposition
``Pi_dual(z) = z + Pi(-z)`` with derivative ``dz - DPi(-z)[dz]``; self-dual
blocks (nonneg, second-order, PSD) shortcut to the primal projection so the
self-duality identity holds exactly, and the dual of the zero cone is all of
space (identity).

Projection derivatives are computed as prepared linear maps
(:func:`dprojection` / :func:`dprojection_dual` return a
:class:`ConeDerivative`), so the expensive per-point work — an
eigendecomposition or a root-find — happens once however many directions are
pushed through.  At points where a projection is not differentiable a fixed,
deterministic generalized-Jacobian element is returned (documented per kind
below); the single exception is the power cone at ``z = 0`` with ``x = 0``
or ``y = 0``, which raises :class:`NotDifferentiableError`.

All functions are pure; blocks never couple, so results are independent of
block evaluation order.
"""

import numpy as np

from conegrad.errors import (
    ConegradError,
    NotDifferentiableError,
    NumericalError,
    ValidationError,
)

ZERO = "zero"
NONNEG = "nonneg"
SOC = "soc"
PSD = "psd"
EXP = "exp"
DEXP = "dexp"
POW = "pow"
DPOW = "dpow"

KINDS = (ZERO, NONNEG, SOC, PSD, EXP, DEXP, POW, DPOW)
_KIND_RANK = {kind: rank for rank, kind in enumerate(KINDS)}


class ConeBlock:
    """One block of a product cone.

    Attributes:
        kind: one of :data:`KINDS`.
        dim: vectorized length of the block.
        order: matrix order for ``psd`` blocks (``dim = order*(order+1)/2``).
        alpha: exponent in (0, 1) for ``pow``/``dpow`` blocks.
    """

    __slots__ = ("kind", "dim", "order", "alpha")

    def __init__(self, kind, dim=None, order=None, alpha=None):
        if kind not in KINDS:
            raise ValidationError(f"unknown cone kind {kind!r}")
        self.kind = kind
        self.order = None
        self.alpha = None
        if kind in (ZERO, NONNEG, SOC):
            if dim is None or int(dim) < 1:
                raise ValidationError(f"{kind} block needs dimension >= 1")
            self.dim = int(dim)
        elif kind == PSD:
            if order is None or int(order) < 1:
                raise ValidationError("psd block needs matrix order >= 1")
            self.order = int(order)
            self.dim = self.order * (self.order + 1) // 2
        elif kind in (EXP, DEXP):
            if dim not in (None, 3):
                raise ValidationError(f"{kind} block has fixed dimension 3")
            self.dim = 3
        else:  # POW, DPOW
            alpha = None if alpha is None else float(alpha)
            if alpha is None or not 0.0 < alpha < 1.0:
                raise ValidationError(f"{kind} block needs exponent strictly inside (0, 1)")
            self.alpha = alpha
            self.dim = 3

    @classmethod
    def zero(cls, dim):
        return cls(ZERO, dim=dim)

    @classmethod
    def nonneg(cls, dim):
        return cls(NONNEG, dim=dim)

    @classmethod
    def soc(cls, dim):
        return cls(SOC, dim=dim)

    @classmethod
    def psd(cls, order):
        return cls(PSD, order=order)

    @classmethod
    def exp(cls):
        return cls(EXP)

    @classmethod
    def dual_exp(cls):
        return cls(DEXP)

    @classmethod
    def power(cls, alpha):
        return cls(POW, alpha=alpha)

    @classmethod
    def dual_power(cls, alpha):
        return cls(DPOW, alpha=alpha)

    def __repr__(self):
        if self.kind == PSD:
            return f"ConeBlock(psd, order={self.order})"
        if self.kind in (POW, DPOW):
            return f"ConeBlock({self.kind}, alpha={self.alpha})"
        return f"ConeBlock({self.kind}, dim={self.dim})"


def block_dim(block):
    """Vectorized length of a block (PSD order d stores d(d+1)/2 numbers)."""
    return block.dim


class ConeSpec:
    """An ordered product of cone blocks.

    Blocks must follow the canonical kind order (zero, nonneg, soc, psd,
    exp, dexp, pow, dpow), with at most one zero and one nonneg block; this
    is validated at construction.
    """

    __slots__ = ("blocks", "dim", "_slices")

    def __init__(self, blocks):
        blocks = tuple(blocks)
        rank = -1
        for i, block in enumerate(blocks):
            if not isinstance(block, ConeBlock):
                raise ValidationError(f"blocks[{i}] is not a ConeBlock")
            r = _KIND_RANK[block.kind]
            if r < rank:
                raise ValidationError(
                    f"cone blocks out of canonical order: {block.kind} after {blocks[i - 1].kind}")
            if r == rank and block.kind in (ZERO, NONNEG):
                raise ValidationError(f"at most one {block.kind} block is allowed")
            rank = r
        self.blocks = blocks
        offsets = np.cumsum([0] + [b.dim for b in blocks])
        self.dim = int(offsets[-1])
        self._slices = tuple(
            (block, int(offsets[i]), int(offsets[i + 1])) for i, block in enumerate(blocks))

    def slices(self):
        """Yield ``(block, start, stop)`` triples in order."""
        return self._slices

    def __repr__(self):
        return f"ConeSpec({list(self.blocks)!r})"


# ---------------------------------------------------------------------------
# svec storage for symmetric matrices
# ---------------------------------------------------------------------------

_svec_cache = {}


def _svec_layout(order):
    """(rows, cols, scale) of the lower triangle in column-major order."""
    layout = _svec_cache.get(order)
    if layout is None:
        cols, rows = np.triu_indices(order)
        scale = np.where(rows == cols, 1.0, np.sqrt(2.0))
        layout = (rows, cols, scale)
        _svec_cache[order] = layout
    return layout


def svec(Z):
    """Vectorize a symmetric matrix: lower triangle, column-major, with
    off-diagonal entries scaled by sqrt(2) so inner products are preserved."""
    Z = np.asarray(Z, dtype=np.float64)
    rows, cols, scale = _svec_layout(Z.shape[0])
    return Z[rows, cols] * scale


def smat(v, order):
    """Inverse of :func:`svec`."""
    rows, cols, scale = _svec_layout(order)
    vals = np.asarray(v, dtype=np.float64) / scale
    Z = np.zeros((order, order))
    Z[rows, cols] = vals
    Z[cols, rows] = vals
    return Z


# ---------------------------------------------------------------------------
# Exponential cone
# ---------------------------------------------------------------------------

_EXP_TOL = 1e-14  # relative tolerance on the projection ratio root
_EXP_MAX_ITER = 200


def _in_exp(p):
    """Closed membership in the exponential cone."""
    x, y, z = p
    if y > 0.0:
        with np.errstate(over="ignore"):
            return y * np.exp(x / y) <= z
    return y == 0.0 and x <= 0.0 and z >= 0.0


def _in_exp_polar(p):
    """Closed membership in the polar of the exponential cone."""
    x, y, z = p
    if x > 0.0:
        with np.errstate(over="ignore"):
            return x * np.exp(y / x) <= -np.e * z
    return x == 0.0 and y <= 0.0 and z <= 0.0


def _exp_h(p, rho):
    """Value and derivative of the boundary-consistency function.

    The smooth boundary of the cone is ``yhat * (rho, 1, e^rho)`` with
    outward normal ``(e^rho, (1-rho)e^rho, -1)``; a point projects onto the
    ray with ratio ``rho = xhat/yhat`` exactly when it is orthogonal to the
    cross product of those two frames, giving the scalar equation

        h(rho) = x(-1 - (1-rho)e^{2rho}) + y(rho + e^{2rho})
                 - z e^rho (rho^2 - rho + 1) = 0.

    For ``rho > 0`` the whole equation is scaled by ``e^{-2rho}`` (same
    roots, same signs) so no exponential overflows.
    """
    x, y, z = p
    if rho <= 0.0:
        er = np.exp(rho)
        e2 = er * er
        # er underflows before rho^2 - rho + 1 can overflow; the product is 0.
        t3 = 0.0 if er == 0.0 else z * er * (rho * rho - rho + 1.0)
        t3p = 0.0 if er == 0.0 else z * er * (rho * rho + rho)
        h = x * (-1.0 - (1.0 - rho) * e2) + y * (rho + e2) - t3
        hp = x * e2 * (2.0 * rho - 1.0) + y * (1.0 + 2.0 * e2) - t3p
    else:
        em = np.exp(-rho)
        em2 = em * em
        t3 = 0.0 if em == 0.0 else z * em * (rho * rho - rho + 1.0)
        t3p = 0.0 if em == 0.0 else z * em * (rho * rho - 3.0 * rho + 2.0)
        h = x * (rho - 1.0 - em2) + y * (1.0 + rho * em2) - t3
        hp = x * (1.0 + 2.0 * em2) + y * em2 * (1.0 - 2.0 * rho) + t3p
    return h, hp


def _exp_point_from_rho(p, rho):
    """Candidate projection ``(phat, yhat, mu, mu_escaled)`` for a ratio root.

    ``mu_escaled`` is ``mu * e^rho``, computed without forming ``e^rho``
    (needed for the stationarity residuals when ``rho`` is large).
    """
    x, y, z = p
    if abs(rho) > 1e150:
        # Far along the boundary ray the projection degenerates toward the
        # (x, 0, max(z, 0)) face; keep the leading terms only.
        yhat = x / rho
        mu = -z if rho < 0 else 0.0
        return np.array([x, yhat, 0.0]), yhat, mu, 0.0
    if rho <= 0.0:
        er = np.exp(rho)
        den = rho * rho + 1.0 + er * er
        yhat = (rho * x + y + z * er) / den
        zhat = yhat * er
        dden = er * er * (1.0 + (1.0 - rho) ** 2) + 1.0
        mu = (x * er + y * (1.0 - rho) * er - z) / dden
        mue = mu * er
    else:
        em = np.exp(-rho)
        em2 = em * em
        den = (rho * rho + 1.0) * em2 + 1.0
        yhat = ((rho * x + y) * em2 + z * em) / den
        zhat = ((rho * x + y) * em + z) / den
        dden = 1.0 + (1.0 - rho) ** 2 + em2
        mu = ((x + y * (1.0 - rho)) * em - z * em2) / dden
        mue = ((x + y * (1.0 - rho)) - z * em) / dden
    return np.array([rho * yhat, yhat, zhat]), yhat, mu, mue


def _exp_residuals(p, rho, phat, mu, mue):
    """Stationarity residuals of the projection system at a candidate."""
    r1 = phat[0] - p[0] + mue
    r2 = phat[1] - p[1] + mue * (1.0 - rho)
    r3 = phat[2] - p[2] - mu
    if abs(rho) > 700.0:
        # e^rho is not representable; the curve constraint residual is zero
        # by construction of zhat in this regime.
        r4 = 0.0
    else:
        r4 = phat[1] * np.exp(rho) - phat[2]
    return abs(r1), abs(r2), abs(r3), abs(r4)


def _exp_polish_root(p, lo, hi, flo, fhi):
    """Newton iteration on the ratio equation, safeguarded by the bracket."""
    rho = 0.5 * (lo + hi)
    for _ in range(_EXP_MAX_ITER):
        f, fp = _exp_h(p, rho)
        if f == 0.0:
            return rho
        if (f > 0.0) == (flo > 0.0):
            lo, flo = rho, f
        else:
            hi, fhi = rho, f
        if fp != 0.0:
            step = rho - f / fp
        else:
            step = 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - rho) <= _EXP_TOL * (1.0 + abs(rho)):
            return step
        rho = step
    return rho


def _solve_exp_rho(p):
    """Root-finding case of the exponential projection.

    Scans expanding brackets for sign changes of the ratio equation, polishes
    each candidate, and accepts the one that yields a valid projection
    (``yhat > 0``, ``mu >= 0`` up to roundoff) with small stationarity
    residuals.  Returns ``(rho, phat, yhat, mu)``.
    """
    scale = 1.0 + float(np.linalg.norm(p))
    tol = 1e-10 * scale
    x, y, _ = p
    # The ratio can be as large as the asymptotic roots x/y and 1 - y/x.
    limit = 4.0
    if y != 0.0:
        limit = max(limit, 4.0 * abs(x / y))
    if x != 0.0:
        limit = max(limit, 4.0 * abs(1.0 - y / x))
    limit = min(limit, 1e160)

    span = 1.0
    while True:
        grid = np.linspace(-span, span, 129)
        values = [_exp_h(p, g)[0] for g in grid]
        for i in range(len(grid) - 1):
            a, b = values[i], values[i + 1]
            if a == 0.0:
                rho = grid[i]
            elif a * b < 0.0:
                rho = _exp_polish_root(p, grid[i], grid[i + 1], a, b)
            else:
                continue
            phat, yhat, mu, mue = _exp_point_from_rho(p, rho)
            if yhat > 0.0 and mu >= -tol:
                if max(_exp_residuals(p, rho, phat, mu, mue)) <= tol:
                    return rho, phat, yhat, mu
        if values[-1] == 0.0:
            rho = grid[-1]
            phat, yhat, mu, mue = _exp_point_from_rho(p, rho)
            if yhat > 0.0 and mu >= -tol:
                if max(_exp_residuals(p, rho, phat, mu, mue)) <= tol:
                    return rho, phat, yhat, mu
        if span >= limit:
            raise NumericalError(
                "exponential cone projection root-finding did not converge")
        span = min(2.0 * span, limit)


def solve_exp_projection(p):
    """Projection onto the exponential cone in the root-finding case.

    Returns ``(projected, mu)`` where ``projected`` lies on the smooth part
    of the cone boundary and ``mu`` is the multiplier of the boundary
    constraint; the stationarity system is satisfied to
    ``1e-10 * (1 + ||p||)`` per component.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValidationError("exponential cone points have dimension 3")
    _, phat, _, mu = _solve_exp_rho(p)
    return phat, mu


def _in_exp_soft(p, tol):
    """Membership in the cone, thickened by ``tol`` (knife-edge rescue)."""
    x, y, z = p
    if y > tol:
        with np.errstate(over="ignore"):
            return y * np.exp(x / y) <= z + tol
    return abs(y) <= tol and x <= tol and z >= -tol


def _in_exp_polar_soft(p, tol):
    """Membership in the polar, thickened by ``tol`` (knife-edge rescue)."""
    x, y, z = p
    if x > tol:
        with np.errstate(over="ignore"):
            return x * np.exp(y / x) <= -np.e * z + tol
    return abs(x) <= tol and y <= tol and z <= tol


def _project_exp(p):
    if _in_exp(p):
        return p.copy()
    if _in_exp_polar(p):
        return np.zeros(3)
    x, y, z = p
    if x <= 0.0 and y <= 0.0:
        return np.array([x, 0.0, max(z, 0.0)])
    try:
        _, phat, _, _ = _solve_exp_rho(p)
    except NumericalError:
        # No valid root: the point sits within roundoff of the cone or its
        # polar, where the projection is (numerically) the point or zero.
        tol = 1e-9 * (1.0 + float(np.linalg.norm(p)))
        if _in_exp_soft(p, tol):
            return p.copy()
        if _in_exp_polar_soft(p, tol):
            return np.zeros(3)
        raise
    return phat


def _exp_deriv(p):
    """Projection derivative as a dense 3x3 matrix (fixed choice at kinks).

    Interior of the cone gives the identity and the closed polar gives zero;
    the quadrant ``x <= 0, y <= 0`` (which includes the flat face of the
    cone) uses the diagonal limit from below; everything else — including
    the smooth part of the cone boundary, where root-finding still applies —
    differentiates the projection stationarity system.
    """
    x, y, z = p
    if y > 0.0:
        with np.errstate(over="ignore"):
            interior = y * np.exp(x / y) < z
        if interior:
            return np.eye(3)
    if _in_exp_polar(p):
        return np.zeros((3, 3))
    if x <= 0.0 and y <= 0.0:
        return np.diag([1.0, 0.0, 1.0 if z > 0.0 else 0.0])
    try:
        rho, phat, yhat, mu = _solve_exp_rho(p)
    except NumericalError:
        tol = 1e-9 * (1.0 + float(np.linalg.norm(p)))
        if _in_exp_soft(p, tol):
            return np.eye(3)
        if _in_exp_polar_soft(p, tol):
            return np.zeros((3, 3))
        if x <= tol and y <= tol:
            return np.diag([1.0, 0.0, 1.0 if z > 0.0 else 0.0])
        raise
    if abs(rho) > 700.0:
        raise NumericalError(
            "exponential cone projection derivative overflows on the boundary ray")
    er = np.exp(rho)
    core = mu * er / yhat
    J = np.array([
        [1.0 + core, -rho * core, 0.0, er],
        [-rho * core, 1.0 + rho * rho * core, 0.0, (1.0 - rho) * er],
        [0.0, 0.0, 1.0, -1.0],
        [er, (1.0 - rho) * er, -1.0, 0.0],
    ])
    if not np.all(np.isfinite(J)):
        raise NumericalError("exponential cone derivative system is not finite")
    D = np.linalg.solve(J, np.eye(4)[:, :3])[:3, :]
    return 0.5 * (D + D.T)


# ---------------------------------------------------------------------------
# Power cone
# ---------------------------------------------------------------------------

_POW_TOL = 1e-12  # absolute residual tolerance, scaled by 1 + |z|


def _in_pow(p, alpha):
    """Closed membership in the power cone."""
    x, y, z = p
    return x >= 0.0 and y >= 0.0 and x ** alpha * y ** (1.0 - alpha) >= abs(z)


def _in_pow_polar(p, alpha):
    """Closed membership in the polar of the power cone."""
    x, y, z = p
    if x > 0.0 or y > 0.0:
        return False
    return (-x / alpha) ** alpha * (-y / (1.0 - alpha)) ** (1.0 - alpha) >= abs(z)


def _pow_f(w, coeff, r, a):
    """The boundary coordinate ``f(r) = (w + sqrt(w^2 + 4c r(a - r))) / 2``.

    For ``w < 0`` the direct form cancels catastrophically as ``r -> 0``;
    multiplying through by the conjugate keeps full relative accuracy.
    """
    q = 4.0 * coeff * r * (a - r)
    s = np.sqrt(w * w + q)
    if w >= 0.0:
        return 0.5 * (w + s)
    return 0.5 * q / (s - w)


def _pow_h(p, alpha, r, a):
    """Residual ``f_x(r)^alpha f_y(r)^(1-alpha) - r`` and its derivative."""
    x, y, _ = p
    fx = _pow_f(x, alpha, r, a)
    fy = _pow_f(y, 1.0 - alpha, r, a)
    prod = fx ** alpha * fy ** (1.0 - alpha)
    h = prod - r
    if fx > 0.0 and fy > 0.0:
        fxp = alpha * (a - 2.0 * r) / np.sqrt(x * x + 4.0 * alpha * r * (a - r))
        fyp = (1.0 - alpha) * (a - 2.0 * r) / np.sqrt(
            y * y + 4.0 * (1.0 - alpha) * r * (a - r))
        hp = prod * (alpha * fxp / fx + (1.0 - alpha) * fyp / fy) - 1.0
    else:
        hp = None
    return h, hp


def _pow_bracket(p, alpha):
    """Bracket the radial root, or report which side the point falls on.

    Returns ``("root", (lo, flo, hi, fhi))`` with a sign change enclosed,
    or ``("cone", None)`` / ``("polar", None)`` when the residual has no
    crossing — which happens exactly when the point (numerically) belongs
    to the cone or its polar.
    """
    x, y, z = p
    a = abs(z)
    fhi = _pow_h(p, alpha, a, a)[0]
    if fhi >= 0.0:
        return "cone", None
    if x > 0.0 and y > 0.0:
        return "root", (0.0, x ** alpha * y ** (1.0 - alpha), a, fhi)
    lo = 0.5 * a
    flo = _pow_h(p, alpha, lo, a)[0]
    for _ in range(200):
        if flo > 0.0:
            return "root", (lo, flo, a, fhi)
        lo *= 0.5
        flo = _pow_h(p, alpha, lo, a)[0]
    return "polar", None


def _pow_solve_bracketed(p, alpha, lo, flo, hi, fhi):
    """Bisection to near machine width, then safeguarded Newton polish."""
    a = abs(p[2])
    tol = _POW_TOL * (1.0 + a)
    if flo == 0.0:
        return lo

    while hi - lo > 1e-14 * a:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = _pow_h(p, alpha, mid, a)[0]
        if fm > 0.0:
            lo = mid
        elif fm < 0.0:
            hi = mid
        else:
            return mid

    r = 0.5 * (lo + hi)
    for _ in range(50):
        f, fp = _pow_h(p, alpha, r, a)
        if abs(f) <= 0.25 * tol:
            break
        if f > 0.0:
            lo = r
        else:
            hi = r
        step = r - f / fp if fp not in (None, 0.0) else 0.5 * (lo + hi)
        if not lo < step < hi:
            step = 0.5 * (lo + hi)
        if abs(step - r) <= 1e-17 * (1.0 + r):
            r = step
            break
        r = step

    f = _pow_h(p, alpha, r, a)[0]
    if abs(f) <= tol:
        return r
    # Near-boundary points can put the residual slope above 1/ulp, making
    # the tolerance unattainable on the float grid; collapse the bracket to
    # adjacent floats instead — a sign change there pins the root exactly.
    if f > 0.0:
        lo = r
    else:
        hi = r
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = _pow_h(p, alpha, mid, a)[0]
        if fm > 0.0:
            lo = mid
        elif fm < 0.0:
            hi = mid
        else:
            return mid
    flo = _pow_h(p, alpha, lo, a)[0]
    fhi = _pow_h(p, alpha, hi, a)[0]
    return lo if abs(flo) <= abs(fhi) else hi


def solve_pow_r(p, alpha):
    """Radial coordinate of the power cone projection.

    For ``p`` outside the cone and its polar with ``z != 0``, returns the
    unique ``r`` in ``(0, |z|)`` with ``f_x(r)^alpha f_y(r)^(1-alpha) = r``,
    to a residual of at most ``1e-12 * (1 + |z|)``.  A failure to bracket
    the root signals a misclassified input and raises
    :class:`NumericalError`.
    """
    p = np.ascontiguousarray(p, dtype=np.float64)
    if p.shape != (3,):
        raise ValidationError("power cone points have dimension 3")
    if not 0.0 < float(alpha) < 1.0:
        raise ValidationError("power cone exponent must lie strictly inside (0, 1)")
    if p[2] == 0.0:
        raise ValidationError("power cone root-finding requires z != 0")
    side, bracket = _pow_bracket(p, alpha)
    if side == "cone":
        raise NumericalError(
            "power cone root bracket failed at r = |z| (point lies in the cone?)")
    if side == "polar":
        raise NumericalError(
            "power cone root bracket failed near r = 0 (point lies in the polar?)")
    return _pow_solve_bracketed(p, alpha, *bracket)


def _project_pow(p, alpha):
    if _in_pow(p, alpha):
        return p.copy()
    if _in_pow_polar(p, alpha):
        return np.zeros(3)
    x, y, z = p
    if z == 0.0:
        return np.array([max(x, 0.0), max(y, 0.0), 0.0])
    a = abs(z)
    side, bracket = _pow_bracket(p, alpha)
    if side == "cone":  # on the boundary up to roundoff
        return p.copy()
    if side == "polar":
        return np.zeros(3)
    r = _pow_solve_bracketed(p, alpha, *bracket)
    return np.array([_pow_f(x, alpha, r, a), _pow_f(y, 1.0 - alpha, r, a),
                     np.sign(z) * r])


def _pow_deriv(p, alpha):
    """Projection derivative as a dense 3x3 matrix.

    Raises :class:`NotDifferentiableError` at ``z = 0`` with ``x = 0`` or
    ``y = 0`` (the apex strata, where no generalized-Jacobian choice is
    principled).  The closed cone maps to the identity — on the boundary
    this agrees with the limit of the root-finding formula — and the closed
    polar maps to zero.
    """
    x, y, z = p
    if z == 0.0 and (x == 0.0 or y == 0.0):
        raise NotDifferentiableError(
            "power cone projection is not differentiable at z = 0 with x = 0 or y = 0")
    if _in_pow(p, alpha):
        return np.eye(3)
    if _in_pow_polar(p, alpha):
        return np.zeros((3, 3))
    if z != 0.0:
        a = abs(z)
        side, bracket = _pow_bracket(p, alpha)
        if side == "cone":  # boundary up to roundoff: identity, as on the cone
            return np.eye(3)
        if side == "polar":
            return np.zeros((3, 3))
        r = _pow_solve_bracketed(p, alpha, *bracket)
        fx = _pow_f(x, alpha, r, a)
        fy = _pow_f(y, 1.0 - alpha, r, a)
        gx = 2.0 * fx - x
        gy = 2.0 * fy - y
        ratio = alpha * x / gx + (1.0 - alpha) * y / gy
        L = 2.0 * (a - r) / (a + (a - 2.0 * r) * ratio)
        sz = np.sign(z)
        D = np.empty((3, 3))
        D[0, 0] = 0.5 + x / (2.0 * gx) + alpha ** 2 * (a - 2.0 * r) * r * L / gx ** 2
        D[1, 1] = 0.5 + y / (2.0 * gy) + (1.0 - alpha) ** 2 * (a - 2.0 * r) * r * L / gy ** 2
        D[0, 1] = D[1, 0] = (alpha - alpha ** 2) * (a - 2.0 * r) * r * L / (gx * gy)
        D[0, 2] = D[2, 0] = sz * alpha * r * L / gx
        D[1, 2] = D[2, 1] = sz * (1.0 - alpha) * r * L / gy
        D[2, 2] = r / a - r / a * ratio * L
        return D
    # z = 0 with x and y nonzero of opposite signs (same signs are inside
    # the cone or its polar and were handled above).
    if x > 0.0:  # y < 0
        if alpha > 0.5:
            d = 1.0
        elif alpha < 0.5:
            d = 0.0
        else:
            d = x / (2.0 * abs(y) + x)
    else:  # x < 0, y > 0
        if alpha < 0.5:
            d = 1.0
        elif alpha > 0.5:
            d = 0.0
        else:
            d = y / (2.0 * abs(x) + y)
    return np.diag([1.0 if x > 0.0 else 0.0, 1.0 if y > 0.0 else 0.0, d])


# ---------------------------------------------------------------------------
# Second-order and PSD blocks
# ---------------------------------------------------------------------------


def _project_soc(z):
    t, u = z[0], z[1:]
    nu = float(np.linalg.norm(u))
    if nu <= -t:
        return np.zeros_like(z)
    if nu <= t:
        return z.copy()
    return 0.5 * (1.0 + t / nu) * np.concatenate([[nu], u])


def _soc_deriv_apply(z):
    """Derivative applier for a second-order cone block.

    Strict interior and polar give identity and zero; the boundary shell
    ``||u|| = |t| != 0`` uses the third-branch formula (its natural
    continuation), and the apex uses one half the identity, matching the
    nonneg convention in one dimension.
    """
    t, u = z[0], z[1:]
    nu = float(np.linalg.norm(u))
    if nu == 0.0 and t == 0.0:
        return lambda dv: 0.5 * dv
    if nu < -t:
        return lambda dv: np.zeros_like(dv)
    if nu < t:
        return lambda dv: dv.copy()

    def apply(dv, t=t, u=u, nu=nu):
        dt, du = dv[0], dv[1:]
        udu = float(u @ du)
        top = nu * dt + udu
        rest = u * dt + (t + nu) * du - (t / nu ** 2) * udu * u
        return np.concatenate([[top], rest]) / (2.0 * nu)

    return apply


def _project_psd(v, order):
    lam, V = np.linalg.eigh(smat(v, order))
    return svec((V * np.clip(lam, 0.0, None)) @ V.T)


def _psd_deriv_apply(v, order):
    """Derivative applier for a PSD block.

    Eigenvalues within ``1e-12 * max|lambda|`` of zero are classified as
    nonnegative; paired classifications select the scaling matrix entries
    (1 for two nonnegative, 0 for two negative, ``li / (li - lj)`` across).
    """
    lam, V = np.linalg.eigh(smat(v, order))
    tol = 1e-12 * float(np.max(np.abs(lam))) if lam.size else 0.0
    pos = lam >= -tol
    B = np.zeros((order, order))
    both_pos = pos[:, None] & pos[None, :]
    B[both_pos] = 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = lam[:, None] / (lam[:, None] - lam[None, :])
    cross = pos[:, None] & ~pos[None, :]
    B[cross] = ratio[cross]
    B[cross.T] = ratio.T[cross.T]

    def apply(dv, V=V, B=B, order=order):
        M = V.T @ smat(dv, order) @ V
        return svec(V @ (B * M) @ V.T)

    return apply


# ---------------------------------------------------------------------------
# Block dispatch
# ---------------------------------------------------------------------------


def _project_block(block, z):
    kind = block.kind
    if kind == ZERO:
        return np.zeros_like(z)
    if kind == NONNEG:
        return np.maximum(z, 0.0)
    if kind == SOC:
        return _project_soc(z)
    if kind == PSD:
        return _project_psd(z, block.order)
    if kind == EXP:
        return _project_exp(z)
    if kind == DEXP:
        return z + _project_exp(-z)
    if kind == POW:
        return _project_pow(z, block.alpha)
    return z + _project_pow(-z, block.alpha)  # DPOW


def _project_block_dual(block, z):
    kind = block.kind
    if kind == ZERO:
        return z.copy()  # dual of {0} is all of space
    if kind in (NONNEG, SOC, PSD):
        return _project_block(block, z)  # self-dual, exactly
    if kind == EXP:
        return z + _project_exp(-z)
    if kind == DEXP:
        return _project_exp(z)
    if kind == POW:
        return z + _project_pow(-z, block.alpha)
    return _project_pow(z, block.alpha)  # DPOW


def _nonneg_mask(z):
    mask = np.where(z > 0.0, 1.0, 0.0)
    mask[z == 0.0] = 0.5
    return mask


def _deriv_block_apply(block, z):
    kind = block.kind
    if kind == ZERO:
        return lambda dv: np.zeros_like(dv)
    if kind == NONNEG:
        mask = _nonneg_mask(z)
        return lambda dv: mask * dv
    if kind == SOC:
        return _soc_deriv_apply(z)
    if kind == PSD:
        return _psd_deriv_apply(z, block.order)
    if kind == EXP:
        D = _exp_deriv(z)
        return lambda dv: D @ dv
    if kind == DEXP:
        D = _exp_deriv(-z)
        return lambda dv: dv - D @ dv
    if kind == POW:
        D = _pow_deriv(z, block.alpha)
        return lambda dv: D @ dv
    D = _pow_deriv(-z, block.alpha)  # DPOW
    return lambda dv: dv - D @ dv


def _deriv_block_dual_apply(block, z):
    kind = block.kind
    if kind == ZERO:
        return lambda dv: dv.copy()
    if kind in (NONNEG, SOC, PSD):
        return _deriv_block_apply(block, z)
    if kind == EXP:
        D = _exp_deriv(-z)
        return lambda dv: dv - D @ dv
    if kind == DEXP:
        D = _exp_deriv(z)
        return lambda dv: D @ dv
    if kind == POW:
        D = _pow_deriv(-z, block.alpha)
        return lambda dv: dv - D @ dv
    D = _pow_deriv(z, block.alpha)  # DPOW
    return lambda dv: D @ dv


class ConeDerivative:
    """Prepared projection derivative at a point, applied blockwise.

    The map is linear and self-adjoint, so a single ``matvec`` serves both
    directions.
    """

    __slots__ = ("dim", "_parts")

    def __init__(self, dim, parts):
        self.dim = dim
        self._parts = parts

    def matvec(self, dz):
        dz = np.ascontiguousarray(dz, dtype=np.float64)
        if dz.shape != (self.dim,):
            raise ValidationError(f"direction must have length {self.dim}, got {dz.shape}")
        out = np.empty(self.dim)
        for start, stop, apply in self._parts:
            out[start:stop] = apply(dz[start:stop])
        return out


def _blockwise(spec, z, fn):
    z = np.ascontiguousarray(z, dtype=np.float64)
    if z.shape != (spec.dim,):
        raise ValidationError(f"point must have length {spec.dim}, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValidationError("point contains non-finite entries")
    pieces = []
    for i, (block, start, stop) in enumerate(spec.slices()):
        try:
            pieces.append((start, stop, fn(block, z[start:stop])))
        except ConegradError as exc:
            wrapped = type(exc)(f"cone block {i} ({block.kind}): {exc}")
            wrapped.iteration = getattr(exc, "iteration", None)
            raise wrapped from exc
    return z, pieces


def project(spec, z):
    """Euclidean projection of ``z`` onto the product cone."""
    z, pieces = _blockwise(spec, z, _project_block)
    out = np.empty(spec.dim)
    for start, stop, value in pieces:
        out[start:stop] = value
    return out


def project_dual(spec, z):
    """Euclidean projection of ``z`` onto the dual of the product cone."""
    z, pieces = _blockwise(spec, z, _project_block_dual)
    out = np.empty(spec.dim)
    for start, stop, value in pieces:
        out[start:stop] = value
    return out


def dprojection(spec, z):
    """Prepared derivative of :func:`project` at ``z``."""
    _, pieces = _blockwise(spec, z, _deriv_block_apply)
    return ConeDerivative(spec.dim, tuple(pieces))


def dprojection_dual(spec, z):
    """Prepared derivative of :func:`project_dual` at ``z``."""
    _, pieces = _blockwise(spec, z, _deriv_block_dual_apply)
    return ConeDerivative(spec.dim, tuple(pieces))


def dproject(spec, z, dz):
    """Derivative of the projection at ``z`` applied to ``dz``."""
    return dprojection(spec, z).matvec(dz)


def dproject_dual(spec, z, dz):
    """Derivative of the dual projection at ``z`` applied to ``dz``."""
    return dprojection_dual(spec, z).matvec(dz)

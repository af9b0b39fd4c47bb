"""Shared helpers for the test suite."""

import contextlib
import io
import json
from pathlib import Path

import numpy as np

from conegrad import cones
from conegrad.cli import main as cli_main
from conegrad.embedding import DataPerturbation, ProblemData
from conegrad.errors import ConegradError
from conegrad.sparse import CscMatrix

GOLDEN_DIR = Path(__file__).resolve().parent / "golden"
GOLDEN_KINDS = ("zero", "nonneg", "soc", "psd", "exp", "dexp", "pow", "dpow")


def golden_path(name):
    return str(GOLDEN_DIR / name)


def load_golden(name):
    with open(golden_path(name), "r", encoding="utf-8") as handle:
        return json.load(handle)


def run_cli(argv):
    """Run a CLI command in-process; returns (exit code, stdout text)."""
    captured = io.StringIO()
    with contextlib.redirect_stdout(captured):
        code = cli_main([str(a) for a in argv])
    return code, captured.getvalue()


def _array_gap(got, want):
    got, want = np.asarray(got, dtype=float), np.asarray(want, dtype=float)
    if got.shape != want.shape:
        raise AssertionError(f"shape {got.shape} != golden {want.shape}")
    gap = float(np.max(np.abs(got - want))) if got.size else 0.0
    scale = 1.0 + (float(np.max(np.abs(want))) if want.size else 0.0)
    return gap / scale


def golden_result_gap(payload, committed):
    """Worst relative-scaled entry gap between a result and its golden.

    Integer, boolean, and pattern fields must match exactly; float arrays
    are compared as max |got - want| / (1 + max |want|).
    """
    if set(payload) != set(committed):
        raise AssertionError(f"keys {set(payload)} != golden {set(committed)}")
    worst = 0.0
    for key, want in committed.items():
        got = payload[key]
        if key == "diagnostics":
            for field in ("converged", "derivative_unreliable",
                          "lsmr_iterations"):
                if got[field] != want[field]:
                    raise AssertionError(
                        f"diagnostics.{field}: {got[field]!r} != "
                        f"golden {want[field]!r}")
        elif isinstance(want, dict):  # sparse matrix: exact pattern
            for field in ("shape", "col_ptr", "row_idx"):
                if got[field] != want[field]:
                    raise AssertionError(f"{key}.{field} differs from golden")
            worst = max(worst, _array_gap(got["values"], want["values"]))
        else:
            worst = max(worst, _array_gap(got, want))
    return worst


def random_csc(rng, nrows, ncols, density=0.3):
    """Random sparse matrix with roughly ``density`` fill."""
    dense = rng.standard_normal((nrows, ncols))
    dense[rng.random((nrows, ncols)) >= density] = 0.0
    return CscMatrix.from_dense(dense)


def random_symmetric_csc(rng, n, density=0.4):
    """Random sparse symmetric matrix (pattern and values)."""
    dense = rng.standard_normal((n, n))
    dense = 0.5 * (dense + dense.T)
    mask = rng.random((n, n)) < density
    mask |= mask.T
    np.fill_diagonal(mask, True)
    dense[~mask] = 0.0
    return CscMatrix.from_dense(dense)


def full_cone():
    """A product cone exercising every supported block kind (dim 26)."""
    return cones.ConeSpec(
        [
            cones.ConeBlock.zero(2),
            cones.ConeBlock.nonneg(3),
            cones.ConeBlock.soc(3),
            cones.ConeBlock.psd(3),
            cones.ConeBlock.exp(),
            cones.ConeBlock.dual_exp(),
            cones.ConeBlock.power(0.3),
            cones.ConeBlock.dual_power(0.7),
        ]
    )


def random_problem(rng, cone, n, density=0.4):
    """Random problem data over ``cone`` with ``n`` primal variables."""
    m = cone.dim
    return ProblemData(
        random_symmetric_csc(rng, n, density),
        random_csc(rng, m, n, density=max(density, 2.0 / n)),
        rng.standard_normal(n),
        rng.standard_normal(m),
        cone,
    )


def random_perturbation(rng, theta):
    """Random perturbation supported on the sparsity patterns of ``theta``."""
    sym = rng.standard_normal((theta.n, theta.n))
    sym = 0.5 * (sym + sym.T)
    return DataPerturbation(
        theta.P.with_values(sym[theta.P.row_idx, theta.P.entry_cols()]),
        theta.A.with_values(rng.standard_normal(theta.A.nnz)),
        rng.standard_normal(theta.n),
        rng.standard_normal(theta.m),
    )


def stable_dual_point(rng, spec, margin=1e-4, tries=500):
    """Sample ``v`` where the dual-cone projection derivative is stable.

    Rejects points whose prepared derivative jumps (or stops existing) under
    perturbations of size ``margin * (1 + ||v||)``.  A projection branch
    crossing moves the derivative by order one, while smooth curvature moves
    it proportionally to the step, so a loose threshold cleanly separates the
    two; downstream finite-difference checks then see a locally smooth map.
    """
    probes = rng.standard_normal((4, spec.dim))
    for _ in range(tries):
        v = rng.standard_normal(spec.dim) * rng.choice([0.4, 1.0, 3.0])
        try:
            base = cones.dprojection_dual(spec, v)
        except ConegradError:
            continue
        base_mat = np.stack([base.matvec(p) for p in probes])
        scale = margin * (1.0 + np.linalg.norm(v))
        ok = True
        for _ in range(6):
            shifted = v + rng.standard_normal(spec.dim) * scale
            try:
                near = cones.dprojection_dual(spec, shifted)
            except ConegradError:
                ok = False
                break
            near_mat = np.stack([near.matvec(p) for p in probes])
            if np.linalg.norm(near_mat - base_mat) > 0.03 * (
                1.0 + np.linalg.norm(base_mat)
            ):
                ok = False
                break
        if ok:
            return v
    raise AssertionError("could not sample a stably differentiable dual point")


def kkt_solution(rng, cone, n, density=0.4, stable=True, unique=False):
    """Construct ``(theta, z)`` with ``z`` encoding an exact solution.

    Works backwards from a complementary pair: split a point ``w`` by Moreau
    into ``s = project(w)`` and ``y = s - w`` (so ``s`` is in the cone, ``y``
    in its dual, and ``s'y = 0``), pick ``x`` freely, then choose ``b`` and
    ``q`` to make the optimality conditions hold exactly.  The encoding
    ``z = (x, y - s, 1)`` then has zero residual by construction.  With
    ``stable`` the middle block is sampled away from projection kinks so the
    residual map is differentiable at ``z``.

    With ``unique`` the problem is arranged to have an isolated solution so
    that its derivative is well-defined: ``P`` is positive definite (pinning
    the primal through stationarity) and ``n >= m`` is required with a dense
    enough ``A`` to have full column rank (pinning the whole dual at once).
    Without it, duals of problems with ``m >> n`` are badly non-unique and
    the residual Jacobian is rank-deficient far beyond the one scaling
    direction it always annihilates.
    """
    if stable:
        v = stable_dual_point(rng, cone)
    else:
        v = rng.standard_normal(cone.dim)
    w = -v
    s = cones.project(cone, w)
    y = s - w
    x = rng.standard_normal(n)
    if unique:
        if n < cone.dim:
            raise ValueError(f"unique synthesis needs n >= m, got n={n}, m={cone.dim}")
        M = rng.standard_normal((n, n)) / np.sqrt(n)
        P = CscMatrix.from_dense(M.T @ M + 0.5 * np.eye(n))
        A = random_csc(rng, cone.dim, n, density=max(density, 0.6))
    else:
        P = random_symmetric_csc(rng, n, density)
        A = random_csc(rng, cone.dim, n, density=max(density, 2.0 / n))
    b = A.matvec(x) + s
    q = -(P.matvec(x) + A.rmatvec(y))
    theta = ProblemData(P, A, q, b, cone)
    z = np.concatenate([x, y - s, [1.0]])
    return theta, z


def adjoint_defect(op, rng, trials=10):
    """Worst normalized adjoint-probe defect over random vector pairs.

    For exact adjoint pairs this is roundoff-sized: the defect
    ``|<Au, w> - <u, A'w>|`` is scaled by ``1 + ||Au|| * ||w||``.
    """
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(op.in_dim)
        w = rng.standard_normal(op.out_dim)
        au = op.matvec(u)
        atw = op.rmatvec(w)
        defect = abs(au @ w - u @ atw) / (1 + np.linalg.norm(au) * np.linalg.norm(w))
        worst = max(worst, defect)
    return worst

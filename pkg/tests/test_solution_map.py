"""Tests for solution encoding, decoding, and the JVP/VJP pipeline."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from conegrad import cones
from conegrad.embedding import DataPerturbation, ProblemData
from conegrad.errors import DomainError, ValidationError
from conegrad.solution_map import (
    Diagnostics,
    KktReport,
    Solution,
    SolutionDelta,
    check_solution,
    dphi_adjoint,
    dphi_apply,
    embed,
    jvp,
    phi,
    vjp,
)
from conegrad.sparse import CscMatrix, same_pattern

from helpers import full_cone, kkt_solution, random_perturbation

TIGHT = dict(atol=1e-12, btol=1e-12)


def solution_from(theta, z):
    """Decode the synthesized embedding point into a Solution."""
    return phi(theta, z)


def kind_cones():
    """One small cone per supported kind."""
    return [
        cones.ConeSpec([cones.ConeBlock.zero(3)]),
        cones.ConeSpec([cones.ConeBlock.nonneg(3)]),
        cones.ConeSpec([cones.ConeBlock.soc(3)]),
        cones.ConeSpec([cones.ConeBlock.psd(3)]),
        cones.ConeSpec([cones.ConeBlock.exp()]),
        cones.ConeSpec([cones.ConeBlock.dual_exp()]),
        cones.ConeSpec([cones.ConeBlock.power(0.3)]),
        cones.ConeSpec([cones.ConeBlock.dual_power(0.6)]),
    ]


class TestTypes:
    def test_solution_validation(self):
        with pytest.raises(ValidationError):
            Solution(np.array([1.0, np.inf]), np.zeros(2), np.zeros(2))
        with pytest.raises(ValidationError):
            Solution(np.zeros(2), np.zeros(3), np.zeros(2))
        sol = Solution(np.zeros(2), np.zeros(3), np.zeros(3))
        assert (sol.n, sol.m) == (2, 3)

    def test_delta_algebra(self):
        d1 = SolutionDelta(np.array([1.0]), np.array([2.0]), np.array([3.0]))
        d2 = SolutionDelta(np.array([4.0]), np.array([5.0]), np.array([6.0]))
        assert d1.dot(d2) == 4.0 + 10.0 + 18.0
        assert_allclose(d1.norm(), np.sqrt(14.0))


class TestEmbedPhi:
    def test_zero_solution(self):
        sol = Solution(np.zeros(2), np.zeros(3), np.zeros(3))
        z = embed(sol)
        assert_allclose(z, np.concatenate([np.zeros(5), [1.0]]), rtol=0, atol=0)

    def test_origin_decodes_to_zero(self):
        rng = np.random.default_rng(0)
        theta, _ = kkt_solution(rng, full_cone(), 4, stable=False)
        z = np.zeros(theta.embedding_dim)
        z[-1] = 1.0
        sol = phi(theta, z)
        assert_allclose(sol.x, 0.0, atol=0)
        # The middle block decodes through the dual projection of zero,
        # which is exactly zero blockwise.
        assert_allclose(sol.y, 0.0, atol=0)
        assert_allclose(sol.s, 0.0, atol=0)

    def test_round_trip(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            theta, z = kkt_solution(rng, full_cone(), 5, stable=False)
            sol = solution_from(theta, z)
            z2 = embed(sol)
            assert np.linalg.norm(z2 - z) <= 1e-10 * (1.0 + np.linalg.norm(z))
            sol2 = phi(theta, z2)
            for a, b in ((sol2.x, sol.x), (sol2.y, sol.y), (sol2.s, sol.s)):
                assert np.linalg.norm(a - b) <= 1e-10 * (1.0 + np.linalg.norm(b))

    def test_projection_splits_embedding(self):
        # Projecting z = (x, y - s, 1) must recover u = (x, y, 1), with the
        # complementary part (0, s, 0) as the projection residual.
        rng = np.random.default_rng(2)
        for _ in range(10):
            theta, z = kkt_solution(rng, full_cone(), 5, stable=False)
            sol = solution_from(theta, z)
            proj = cones.project_dual(theta.cone, z[theta.n : -1])
            u = np.concatenate([z[: theta.n], proj, [1.0]])
            expect_u = np.concatenate([sol.x, sol.y, [1.0]])
            expect_v = np.concatenate([np.zeros(theta.n), sol.s, [0.0]])
            assert np.linalg.norm(u - expect_u) <= 1e-10 * (1 + np.linalg.norm(expect_u))
            assert np.linalg.norm(u - z - expect_v) <= 1e-10 * (1 + np.linalg.norm(expect_v))

    def test_phi_scale_invariance(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            theta, z = kkt_solution(rng, full_cone(), 4, stable=False)
            lam = 10.0 ** rng.uniform(-2, 2)
            a = phi(theta, lam * z)
            b = phi(theta, z)
            for u, v in ((a.x, b.x), (a.y, b.y), (a.s, b.s)):
                assert np.linalg.norm(u - v) <= 1e-12 * (1.0 + np.linalg.norm(v))

    def test_phi_domain(self):
        rng = np.random.default_rng(4)
        theta, z = kkt_solution(rng, full_cone(), 4, stable=False)
        for zN in (0.0, -1.0):
            bad = z.copy()
            bad[-1] = zN
            with pytest.raises(DomainError):
                phi(theta, bad)


class TestDphi:
    def test_last_basis_vector(self):
        rng = np.random.default_rng(10)
        theta, z = kkt_solution(rng, full_cone(), 5)
        sol = solution_from(theta, z)
        e_last = np.zeros(theta.embedding_dim)
        e_last[-1] = 1.0
        delta = dphi_apply(theta, z, e_last)
        assert_allclose(delta.dx, -sol.x, rtol=0, atol=1e-15)
        assert_allclose(delta.dy, -sol.y, rtol=0, atol=1e-15)
        assert_allclose(delta.ds, -sol.s, rtol=0, atol=1e-15)

    def test_requires_normalized_point(self):
        rng = np.random.default_rng(11)
        theta, z = kkt_solution(rng, full_cone(), 4)
        bad = 2.0 * z
        with pytest.raises(DomainError, match="z_N = 1"):
            dphi_apply(theta, bad, np.zeros(theta.embedding_dim))
        with pytest.raises(DomainError, match="z_N = 1"):
            dphi_adjoint(
                theta,
                bad,
                SolutionDelta(np.zeros(theta.n), np.zeros(theta.m), np.zeros(theta.m)),
            )

    def test_adjoint_probe(self):
        rng = np.random.default_rng(12)
        worst = 0.0
        for _ in range(10):
            theta, z = kkt_solution(rng, full_cone(), 5)
            for _ in range(10):
                dz = rng.standard_normal(theta.embedding_dim)
                delta = SolutionDelta(
                    rng.standard_normal(theta.n),
                    rng.standard_normal(theta.m),
                    rng.standard_normal(theta.m),
                )
                fwd = dphi_apply(theta, z, dz)
                adj = dphi_adjoint(theta, z, delta)
                defect = abs(fwd.dot(delta) - dz @ adj) / (
                    1.0 + fwd.norm() * delta.norm()
                )
                worst = max(worst, defect)
        assert worst <= 1e-10

    def test_scaling_direction_is_annihilated(self):
        # The residual is positively homogeneous of degree one, so at any of
        # its zeros the Jacobian annihilates z itself (Euler's identity);
        # the decoder is scale-invariant, so its derivative kills the same
        # direction.  Together these make the least-squares solve's one
        # intrinsic ambiguity harmless.
        from conegrad.embedding import make_F

        rng = np.random.default_rng(14)
        for _ in range(5):
            theta, z = kkt_solution(rng, full_cone(), 5)
            F = make_F(theta, z)
            assert np.linalg.norm(F.matvec(z)) <= 1e-10 * (1.0 + np.linalg.norm(z))
            delta = dphi_apply(theta, z, z)
            assert delta.norm() <= 1e-10 * (1.0 + np.linalg.norm(z))

    def test_finite_difference(self):
        # Step size keeps the iterative projection solvers' output jitter
        # (~1e-11) far below tolerance after division by 2h.
        rng = np.random.default_rng(13)
        h = 1e-4
        for _ in range(6):
            theta, z = kkt_solution(rng, full_cone(), 4)
            for _ in range(3):
                dz = rng.standard_normal(theta.embedding_dim)
                dz /= np.linalg.norm(dz)
                plus = phi(theta, z + h * dz)
                minus = phi(theta, z - h * dz)
                exact = dphi_apply(theta, z, dz)
                fd = np.concatenate(
                    [
                        (plus.x - minus.x) / (2 * h),
                        (plus.y - minus.y) / (2 * h),
                        (plus.s - minus.s) / (2 * h),
                    ]
                )
                ex = np.concatenate([exact.dx, exact.dy, exact.ds])
                assert np.linalg.norm(fd - ex) <= 1e-6 * (1.0 + np.linalg.norm(ex))


class TestCheckSolution:
    def test_synthesized_solutions_pass(self):
        rng = np.random.default_rng(20)
        for _ in range(10):
            theta, z = kkt_solution(rng, full_cone(), 5, stable=False)
            sol = solution_from(theta, z)
            report = check_solution(theta, sol, tol=1e-9 * (1.0 + theta.norm()))
            assert report.ok, report.as_dict()

    def test_zero_problem_zero_solution(self):
        cone = cones.ConeSpec([cones.ConeBlock.nonneg(3)])
        theta = ProblemData(
            CscMatrix.zeros(2, 2), CscMatrix.zeros(3, 2), np.zeros(2), np.zeros(3), cone
        )
        report = check_solution(theta, Solution(np.zeros(2), np.zeros(3), np.zeros(3)))
        assert report.ok
        assert report.max_violation() == 0.0

    def test_perturbed_solution_fails(self):
        rng = np.random.default_rng(21)
        theta, z = kkt_solution(rng, full_cone(), 5, stable=False)
        sol = solution_from(theta, z)
        bumped = Solution(sol.x + 1e-3, sol.y, sol.s)
        report = check_solution(theta, bumped, tol=1e-6)
        assert not report.ok
        assert report.stationarity > 1e-6

    def test_report_shape(self):
        rng = np.random.default_rng(22)
        theta, z = kkt_solution(rng, full_cone(), 4, stable=False)
        report = check_solution(theta, solution_from(theta, z))
        d = report.as_dict()
        assert set(d) == {
            "primal",
            "stationarity",
            "gap",
            "primal_cone_distance",
            "dual_cone_distance",
            "tol",
            "ok",
        }


class TestJvp:
    def test_zero_direction(self):
        rng = np.random.default_rng(30)
        theta, z = kkt_solution(rng, full_cone(), 30, unique=True)
        sol = solution_from(theta, z)
        delta, diag = jvp(theta, sol, DataPerturbation.zeros_like(theta), **TIGHT)
        assert delta.norm() == 0.0
        assert diag.converged
        assert not diag.derivative_unreliable
        assert diag.kkt is not None and diag.kkt.ok

    def test_equality_constrained_qp_oracle(self):
        # With the zero cone the KKT system is square and nonsingular
        # (P positive definite, A full row rank), so the derivative has a
        # closed dense form to compare against.
        rng = np.random.default_rng(31)
        for _ in range(5):
            n, m = 6, 3
            M = rng.standard_normal((n, n))
            Pd = M.T @ M + np.eye(n)
            Ad = rng.standard_normal((m, n))
            q = rng.standard_normal(n)
            b = rng.standard_normal(m)
            kkt = np.block([[Pd, Ad.T], [Ad, np.zeros((m, m))]])
            xy = np.linalg.solve(kkt, np.concatenate([-q, b]))
            x, y = xy[:n], xy[n:]
            theta = ProblemData(
                CscMatrix.from_dense(Pd),
                CscMatrix.from_dense(Ad),
                q,
                b,
                cones.ConeSpec([cones.ConeBlock.zero(m)]),
            )
            sol = Solution(x, y, np.zeros(m))
            dtheta = random_perturbation(rng, theta)
            delta, diag = jvp(theta, sol, dtheta, **TIGHT)
            rhs = np.concatenate(
                [
                    -dtheta.dq - dtheta.dP.matvec(x) - dtheta.dA.rmatvec(y),
                    dtheta.db - dtheta.dA.matvec(x),
                ]
            )
            dxy = np.linalg.solve(kkt, rhs)
            scale = 1.0 + np.linalg.norm(dxy)
            assert np.linalg.norm(delta.dx - dxy[:n]) <= 1e-8 * scale
            assert np.linalg.norm(delta.dy - dxy[n:]) <= 1e-8 * scale
            assert np.linalg.norm(delta.ds) <= 1e-8 * scale
            assert not diag.derivative_unreliable

    def test_analytic_path(self):
        # Move only x along a fixed direction while adjusting q and b to
        # keep (x(t), y, s) optimal; the derivative of the solution map then
        # equals the direction itself.
        rng = np.random.default_rng(32)
        for _ in range(5):
            theta, z = kkt_solution(rng, full_cone(), 30, unique=True)
            sol = solution_from(theta, z)
            dx = rng.standard_normal(theta.n)
            dtheta = DataPerturbation(
                CscMatrix.zeros(theta.n, theta.n),
                CscMatrix.zeros(theta.m, theta.n),
                -theta.P.matvec(dx),
                theta.A.matvec(dx),
            )
            delta, _ = jvp(theta, sol, dtheta, **TIGHT)
            scale = 1.0 + np.linalg.norm(dx)
            assert np.linalg.norm(delta.dx - dx) <= 1e-6 * scale
            assert np.linalg.norm(delta.dy) <= 1e-6 * scale
            assert np.linalg.norm(delta.ds) <= 1e-6 * scale

    def test_linearity(self):
        rng = np.random.default_rng(33)
        theta, z = kkt_solution(rng, full_cone(), 30, unique=True)
        sol = solution_from(theta, z)
        for _ in range(5):
            d1 = random_perturbation(rng, theta)
            d2 = random_perturbation(rng, theta)
            alpha, beta = rng.standard_normal(2)
            combo = DataPerturbation(
                d1.dP.with_values(alpha * d1.dP.values + beta * d2.dP.values),
                d1.dA.with_values(alpha * d1.dA.values + beta * d2.dA.values),
                alpha * d1.dq + beta * d2.dq,
                alpha * d1.db + beta * d2.db,
            )
            out, _ = jvp(theta, sol, combo, **TIGHT)
            o1, _ = jvp(theta, sol, d1, **TIGHT)
            o2, _ = jvp(theta, sol, d2, **TIGHT)
            lhs = np.concatenate([out.dx, out.dy, out.ds])
            rhs = alpha * np.concatenate([o1.dx, o1.dy, o1.ds]) + beta * np.concatenate(
                [o2.dx, o2.dy, o2.ds]
            )
            assert np.linalg.norm(lhs - rhs) <= 1e-8 * (1.0 + np.linalg.norm(rhs))

    def test_kkt_precheck(self):
        rng = np.random.default_rng(34)
        theta, z = kkt_solution(rng, full_cone(), 5)
        sol = solution_from(theta, z)
        bad = Solution(sol.x + 0.1, sol.y, sol.s)
        dtheta = random_perturbation(rng, theta)
        with pytest.raises(ValidationError, match="pre-check") as info:
            jvp(theta, bad, dtheta)
        assert isinstance(info.value.kkt, KktReport)
        delta, diag = jvp(theta, bad, dtheta, check=False)
        assert diag.kkt is None
        assert np.all(np.isfinite(delta.dx))

    def test_unreliable_flag_on_singular_jacobian(self):
        # All-zero data over the zero cone makes the residual Jacobian
        # vanish identically, so no direction can reduce the residual and
        # the diagnostics must say so (while still returning a result).
        m, n = 3, 2
        theta = ProblemData(
            CscMatrix.zeros(n, n),
            CscMatrix.zeros(m, n),
            np.zeros(n),
            np.zeros(m),
            cones.ConeSpec([cones.ConeBlock.zero(m)]),
        )
        sol = Solution(np.zeros(n), np.zeros(m), np.zeros(m))
        dtheta = DataPerturbation(
            CscMatrix.zeros(n, n),
            CscMatrix.zeros(m, n),
            np.array([1.0, 0.0]),
            np.zeros(m),
        )
        delta, diag = jvp(theta, sol, dtheta)
        assert diag.derivative_unreliable
        assert delta.norm() == 0.0


class TestVjp:
    def test_zero_direction(self):
        rng = np.random.default_rng(40)
        theta, z = kkt_solution(rng, full_cone(), 30, unique=True)
        sol = solution_from(theta, z)
        zero = SolutionDelta(np.zeros(theta.n), np.zeros(theta.m), np.zeros(theta.m))
        grad, diag = vjp(theta, sol, zero, **TIGHT)
        assert grad.norm() == 0.0
        assert diag.converged

    def test_output_sparsity(self):
        rng = np.random.default_rng(41)
        theta, z = kkt_solution(rng, full_cone(), 30, unique=True)
        sol = solution_from(theta, z)
        delta = SolutionDelta(
            rng.standard_normal(theta.n),
            rng.standard_normal(theta.m),
            rng.standard_normal(theta.m),
        )
        grad, _ = vjp(theta, sol, delta, **TIGHT)
        assert same_pattern(grad.dP, theta.P)
        assert same_pattern(grad.dA, theta.A)
        # Symmetry of the P part is enforced by construction.
        dense = grad.dP.to_dense()
        assert_allclose(dense, dense.T, rtol=0, atol=0)

    def test_duality_identity_per_kind(self):
        rng = np.random.default_rng(42)
        for cone in kind_cones():
            worst = 0.0
            for _ in range(20):
                theta, z = kkt_solution(rng, cone, cone.dim + 4, unique=True)
                sol = solution_from(theta, z)
                dtheta = random_perturbation(rng, theta)
                delta = SolutionDelta(
                    rng.standard_normal(theta.n),
                    rng.standard_normal(theta.m),
                    rng.standard_normal(theta.m),
                )
                fwd, _ = jvp(theta, sol, dtheta, **TIGHT)
                grad, _ = vjp(theta, sol, delta, **TIGHT)
                lhs = fwd.dot(delta)
                rhs = dtheta.dot(grad)
                defect = abs(lhs - rhs) / (1.0 + abs(lhs) + abs(rhs))
                worst = max(worst, defect)
            assert worst <= 1e-6, (cone.blocks[0].kind, worst)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(43)
        theta, z = kkt_solution(rng, full_cone(), 5)
        sol = solution_from(theta, z)
        bad = SolutionDelta(np.zeros(theta.n + 1), np.zeros(theta.m), np.zeros(theta.m))
        with pytest.raises(ValidationError):
            vjp(theta, sol, bad, **TIGHT)

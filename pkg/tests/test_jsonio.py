"""Tests for the JSON interchange formats."""

import json

import numpy as np
import pytest

from conegrad import jsonio
from conegrad.cones import ConeBlock, ConeSpec
from conegrad.errors import ValidationError
from conegrad.solution_map import SolutionDelta, jvp
from conegrad.sparse import CscMatrix, same_pattern
from conegrad.testkit import GeneratorConfig, generate

from helpers import full_cone, random_perturbation


def mixed_setup(seed=11):
    cone = full_cone()
    cfg = GeneratorConfig(seed, 20, cone.dim, cone, density=0.4)
    return generate(cfg)


def assert_matrices_equal(a, b):
    assert same_pattern(a, b)
    assert np.array_equal(a.values, b.values)


class TestConesCodec:
    def test_round_trip_all_kinds(self):
        spec = full_cone()
        rebuilt = jsonio.parse_cones(jsonio.serialize_cones(spec))
        assert rebuilt.dim == spec.dim
        for left, right in zip(rebuilt.blocks, spec.blocks):
            assert left.kind == right.kind
            assert left.dim == right.dim
            assert left.order == right.order
            assert left.alpha == right.alpha

    def test_grouping(self):
        spec = ConeSpec([
            ConeBlock.soc(3), ConeBlock.soc(4),
            ConeBlock.exp(), ConeBlock.exp(),
            ConeBlock.power(0.25), ConeBlock.power(0.75),
        ])
        assert jsonio.serialize_cones(spec) == [
            {"type": "soc", "dims": [3, 4]},
            {"type": "exp", "count": 2},
            {"type": "pow", "alphas": [0.25, 0.75]},
        ]

    def test_parse_entries(self):
        spec = jsonio.parse_cones([
            {"type": "zero", "dim": 2},
            {"type": "psd", "orders": [2, 3]},
            {"type": "dexp", "count": 1},
            {"type": "dpow", "alphas": [0.5]},
        ])
        assert [b.kind for b in spec.blocks] == ["zero", "psd", "psd", "dexp", "dpow"]
        assert spec.dim == 2 + 3 + 6 + 3 + 3

    def test_errors(self):
        with pytest.raises(ValidationError, match="list"):
            jsonio.parse_cones({"type": "zero", "dim": 2})
        with pytest.raises(ValidationError, match="unknown type"):
            jsonio.parse_cones([{"type": "orthant", "dim": 2}])
        with pytest.raises(ValidationError, match="missing key"):
            jsonio.parse_cones([{"type": "soc"}])
        with pytest.raises(ValidationError, match="unknown key"):
            jsonio.parse_cones([{"type": "zero", "dim": 2, "dims": [2]}])
        with pytest.raises(ValidationError, match="inside"):
            jsonio.parse_cones([{"type": "pow", "alphas": [1.5]}])
        with pytest.raises(ValidationError, match="canonical order"):
            jsonio.parse_cones([
                {"type": "soc", "dims": [3]}, {"type": "zero", "dim": 1}])
        with pytest.raises(ValidationError, match="count"):
            jsonio.parse_cones([{"type": "exp", "count": 0}])
        with pytest.raises(ValidationError, match="integer"):
            jsonio.parse_cones([{"type": "zero", "dim": 2.5}])


class TestProblemCodec:
    def test_bit_exact_round_trip(self):
        theta, _ = mixed_setup()
        # through actual JSON text, so float formatting is exercised too
        rebuilt = jsonio.parse_problem(
            json.loads(json.dumps(jsonio.serialize_problem(theta))))
        assert (rebuilt.n, rebuilt.m) == (theta.n, theta.m)
        assert_matrices_equal(rebuilt.P, theta.P)
        assert_matrices_equal(rebuilt.A, theta.A)
        assert np.array_equal(rebuilt.q, theta.q)
        assert np.array_equal(rebuilt.b, theta.b)
        assert jsonio.serialize_cones(rebuilt.cone) == jsonio.serialize_cones(theta.cone)

    def test_missing_and_unknown_keys(self):
        theta, _ = mixed_setup()
        obj = jsonio.serialize_problem(theta)
        broken = dict(obj)
        del broken["P"]
        with pytest.raises(ValidationError, match="missing key 'P'"):
            jsonio.parse_problem(broken)
        broken = dict(obj)
        broken["extra"] = 1
        with pytest.raises(ValidationError, match="unknown key 'extra'"):
            jsonio.parse_problem(broken)

    def test_dimension_cross_checks(self):
        theta, _ = mixed_setup()
        obj = jsonio.serialize_problem(theta)
        broken = dict(obj)
        broken["m"] = theta.m + 1
        with pytest.raises(ValidationError, match="cone dimension"):
            jsonio.parse_problem(broken)
        broken = dict(obj)
        broken["q"] = obj["q"][:-1]
        with pytest.raises(ValidationError, match="length"):
            jsonio.parse_problem(broken)
        broken = dict(obj)
        broken["A"] = dict(obj["A"], shape=[theta.m + 1, theta.n])
        with pytest.raises(ValidationError):
            jsonio.parse_problem(broken)

    def test_rejects_bad_numbers(self):
        theta, _ = mixed_setup()
        obj = jsonio.serialize_problem(theta)
        broken = dict(obj)
        broken["b"] = list(obj["b"])
        broken["b"][0] = float("inf")
        with pytest.raises(ValidationError, match="finite"):
            jsonio.parse_problem(broken)
        broken = dict(obj)
        broken["b"] = list(obj["b"])
        broken["b"][0] = True
        with pytest.raises(ValidationError, match="number"):
            jsonio.parse_problem(broken)
        broken = dict(obj)
        broken["P"] = dict(obj["P"], col_ptr=[0.5] + obj["P"]["col_ptr"][1:])
        with pytest.raises(ValidationError, match="integer"):
            jsonio.parse_problem(broken)


class TestVectorFiles:
    def test_solution_round_trip(self):
        theta, sol = mixed_setup()
        rebuilt = jsonio.parse_solution(
            json.loads(json.dumps(jsonio.serialize_solution(sol))),
            theta.n, theta.m)
        assert np.array_equal(rebuilt.x, sol.x)
        assert np.array_equal(rebuilt.y, sol.y)
        assert np.array_equal(rebuilt.s, sol.s)

    def test_perturbation_round_trip(self):
        theta, _ = mixed_setup()
        dtheta = random_perturbation(np.random.default_rng(0), theta)
        rebuilt = jsonio.parse_perturbation(
            json.loads(json.dumps(jsonio.serialize_perturbation(dtheta))),
            theta.n, theta.m)
        assert_matrices_equal(rebuilt.dP, dtheta.dP)
        assert_matrices_equal(rebuilt.dA, dtheta.dA)
        assert np.array_equal(rebuilt.dq, dtheta.dq)
        assert np.array_equal(rebuilt.db, dtheta.db)

    def test_empty_pattern_perturbation(self):
        theta, _ = mixed_setup()
        n, m = theta.n, theta.m
        empty = {"shape": [n, n], "col_ptr": [0] * (n + 1),
                 "row_idx": [], "values": []}
        empty_a = {"shape": [m, n], "col_ptr": [0] * (n + 1),
                   "row_idx": [], "values": []}
        dtheta = jsonio.parse_perturbation(
            {"dP": empty, "dA": empty_a,
             "dq": [0.0] * n, "db": [0.0] * m}, n, m)
        assert dtheta.dP.nnz == 0 and dtheta.dA.nnz == 0

    def test_delta_round_trip_and_length(self):
        theta, _ = mixed_setup()
        rng = np.random.default_rng(1)
        delta = SolutionDelta(
            rng.standard_normal(theta.n), rng.standard_normal(theta.m),
            rng.standard_normal(theta.m))
        rebuilt = jsonio.parse_delta(
            json.loads(json.dumps(jsonio.serialize_delta(delta))),
            theta.n, theta.m)
        assert np.array_equal(rebuilt.dx, delta.dx)
        with pytest.raises(ValidationError, match="length"):
            jsonio.parse_delta(jsonio.serialize_delta(delta), theta.n + 1, theta.m)

    def test_parse_vector(self):
        assert np.array_equal(jsonio.parse_vector([1, 2.5], "v"), [1.0, 2.5])
        with pytest.raises(ValidationError, match="list"):
            jsonio.parse_vector("nope", "v")
        with pytest.raises(ValidationError, match="length"):
            jsonio.parse_vector([1.0], "v", 2)
        with pytest.raises(ValidationError, match="number"):
            jsonio.parse_vector([None], "v")


class TestResultSerialization:
    def test_diagnostics_keys(self):
        cone = ConeSpec([ConeBlock.nonneg(6)])
        cfg = GeneratorConfig(42, 10, 6, cone, density=0.5)
        theta, sol = generate(cfg)
        dtheta = random_perturbation(np.random.default_rng(2), theta)
        delta, diag = jvp(theta, sol, dtheta)
        out = jsonio.serialize_jvp_result(delta, diag)
        assert set(out) == {"dx", "dy", "ds", "diagnostics"}
        assert set(out["diagnostics"]) == {
            "lsmr_iterations", "lsmr_residual", "converged",
            "derivative_unreliable", "kkt"}
        assert out["diagnostics"]["kkt"]["ok"] is True
        # the whole payload must be plain JSON types
        json.dumps(out, allow_nan=False)

    def test_kkt_null_when_check_skipped(self):
        cone = ConeSpec([ConeBlock.nonneg(6)])
        cfg = GeneratorConfig(42, 10, 6, cone, density=0.5)
        theta, sol = generate(cfg)
        dtheta = random_perturbation(np.random.default_rng(2), theta)
        delta, diag = jvp(theta, sol, dtheta, check=False)
        out = jsonio.serialize_jvp_result(delta, diag)
        assert out["diagnostics"]["kkt"] is None

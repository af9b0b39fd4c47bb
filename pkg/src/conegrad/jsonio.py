"""JSON interchange for problems, solutions, perturbations, and results.

All command-line traffic uses these formats.  Numbers must be finite JSON
numbers; emitted floats use Python's shortest round-trip decimal form, so
``parse(serialize(x))`` reproduces ``x`` bit for bit.

Sparse matrices (compressed sparse column)::

    {"shape": [rows, cols], "col_ptr": [...], "row_idx": [...],
     "values": [...]}

Cone lists — an ordered JSON array, one entry per run of blocks of the
same kind, in the canonical kind order (out-of-order lists are rejected
rather than permuted)::

    {"type": "zero",   "dim": k}        {"type": "nonneg", "dim": k}
    {"type": "soc",    "dims": [...]}   {"type": "psd",    "orders": [...]}
    {"type": "exp",    "count": k}      {"type": "dexp",   "count": k}
    {"type": "pow",    "alphas": [...]} {"type": "dpow",   "alphas": [...]}

Files::

    problem       {"n", "m", "cones", "P", "A", "q", "b"}
    solution      {"x", "y", "s"}
    perturbation  {"dP", "dA", "dq", "db"}   (dP/dA may be empty-pattern)
    delta         {"dx", "dy", "ds"}
    jvp result    {"dx", "dy", "ds", "diagnostics"}
    vjp result    {"dP", "dA", "dq", "db", "diagnostics"}

where ``diagnostics`` is ``{"lsmr_iterations", "lsmr_residual",
"converged", "derivative_unreliable", "kkt"}`` with ``kkt`` either a
KKT report object or ``null`` when the pre-check was disabled.

Unknown keys are rejected everywhere: a misspelled field should fail
loudly, not silently fall back to a default.
"""

import math

import numpy as np

from conegrad import cones
from conegrad.embedding import DataPerturbation, ProblemData
from conegrad.errors import ValidationError
from conegrad.solution_map import Solution, SolutionDelta
from conegrad.sparse import CscMatrix

__all__ = [
    "parse_cones",
    "serialize_cones",
    "parse_vector",
    "parse_problem",
    "serialize_problem",
    "parse_solution",
    "serialize_solution",
    "parse_perturbation",
    "serialize_perturbation",
    "parse_delta",
    "serialize_delta",
    "serialize_jvp_result",
    "serialize_vjp_result",
]


# ---------------------------------------------------------------------------
# primitive readers
# ---------------------------------------------------------------------------


def _object(obj, what, keys):
    if not isinstance(obj, dict):
        raise ValidationError(f"{what} must be a JSON object")
    missing = [key for key in keys if key not in obj]
    if missing:
        raise ValidationError(f"{what} is missing key '{missing[0]}'")
    unknown = [key for key in obj if key not in keys]
    if unknown:
        raise ValidationError(f"{what} has unknown key '{unknown[0]}'")
    return obj


def _int(value, what):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{what} must be an integer, got {value!r}")
    return value


def _real(value, what):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{what} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ValidationError(f"{what} must be finite, got {value!r}")
    return value


def _int_list(value, what):
    if not isinstance(value, list):
        raise ValidationError(f"{what} must be a list")
    return np.array([_int(v, f"{what}[{i}]") for i, v in enumerate(value)],
                    dtype=np.int64)


def parse_vector(obj, what, length=None):
    """A bare JSON array of finite numbers, optionally of fixed length."""
    if not isinstance(obj, list):
        raise ValidationError(f"{what} must be a list of numbers")
    out = np.array([_real(v, f"{what}[{i}]") for i, v in enumerate(obj)])
    if length is not None and out.size != length:
        raise ValidationError(
            f"{what} must have length {length}, got {out.size}")
    return out


# ---------------------------------------------------------------------------
# cones
# ---------------------------------------------------------------------------

_CONE_PARAM = {
    "zero": "dim", "nonneg": "dim", "soc": "dims", "psd": "orders",
    "exp": "count", "dexp": "count", "pow": "alphas", "dpow": "alphas",
}


def parse_cones(entries):
    """Cone-list JSON to a :class:`~conegrad.cones.ConeSpec`."""
    if not isinstance(entries, list):
        raise ValidationError("cones must be a list of cone entries")
    blocks = []
    for index, entry in enumerate(entries):
        what = f"cones[{index}]"
        if not isinstance(entry, dict) or "type" not in entry:
            raise ValidationError(f"{what} must be an object with a 'type' key")
        kind = entry["type"]
        if kind not in _CONE_PARAM:
            raise ValidationError(f"{what} has unknown type {kind!r}")
        param = _CONE_PARAM[kind]
        _object(entry, what, ("type", param))
        value = entry[param]
        if kind in ("zero", "nonneg"):
            dim = _int(value, f"{what}.dim")
            maker = cones.ConeBlock.zero if kind == "zero" else cones.ConeBlock.nonneg
            blocks.append(maker(dim))
        elif kind == "soc":
            for i, dim in enumerate(_int_list(value, f"{what}.dims")):
                blocks.append(cones.ConeBlock.soc(int(dim)))
        elif kind == "psd":
            for i, order in enumerate(_int_list(value, f"{what}.orders")):
                blocks.append(cones.ConeBlock.psd(int(order)))
        elif kind in ("exp", "dexp"):
            count = _int(value, f"{what}.count")
            if count < 1:
                raise ValidationError(f"{what}.count must be positive, got {count}")
            maker = cones.ConeBlock.exp if kind == "exp" else cones.ConeBlock.dual_exp
            blocks.extend(maker() for _ in range(count))
        else:
            if not isinstance(value, list):
                raise ValidationError(f"{what}.alphas must be a list")
            maker = (cones.ConeBlock.power if kind == "pow"
                     else cones.ConeBlock.dual_power)
            for i, alpha in enumerate(value):
                blocks.append(maker(_real(alpha, f"{what}.alphas[{i}]")))
    return cones.ConeSpec(blocks)


def serialize_cones(spec):
    """Cone-list JSON for a spec, one entry per run of same-kind blocks."""
    entries = []
    for block in spec.blocks:
        kind = block.kind
        if kind in ("zero", "nonneg"):
            entries.append({"type": kind, "dim": block.dim})
            continue
        tail = entries[-1] if entries and entries[-1]["type"] == kind else None
        if kind == "soc":
            if tail is None:
                tail = {"type": kind, "dims": []}
                entries.append(tail)
            tail["dims"].append(block.dim)
        elif kind == "psd":
            if tail is None:
                tail = {"type": kind, "orders": []}
                entries.append(tail)
            tail["orders"].append(block.order)
        elif kind in ("exp", "dexp"):
            if tail is None:
                tail = {"type": kind, "count": 0}
                entries.append(tail)
            tail["count"] += 1
        else:
            if tail is None:
                tail = {"type": kind, "alphas": []}
                entries.append(tail)
            tail["alphas"].append(float(block.alpha))
    return entries


# ---------------------------------------------------------------------------
# matrices and files
# ---------------------------------------------------------------------------


def _parse_csc(obj, what):
    _object(obj, what, ("shape", "col_ptr", "row_idx", "values"))
    shape = obj["shape"]
    if not (isinstance(shape, list) and len(shape) == 2):
        raise ValidationError(f"{what}.shape must be a [rows, cols] pair")
    nrows = _int(shape[0], f"{what}.shape[0]")
    ncols = _int(shape[1], f"{what}.shape[1]")
    try:
        return CscMatrix(
            nrows, ncols,
            _int_list(obj["col_ptr"], f"{what}.col_ptr"),
            _int_list(obj["row_idx"], f"{what}.row_idx"),
            parse_vector(obj["values"], f"{what}.values"))
    except ValidationError as exc:
        raise ValidationError(f"{what}: {exc}") from exc


def _serialize_csc(mat):
    return {
        "shape": [mat.nrows, mat.ncols],
        "col_ptr": [int(v) for v in mat.col_ptr],
        "row_idx": [int(v) for v in mat.row_idx],
        "values": [float(v) for v in mat.values],
    }


def _check_shape(mat, nrows, ncols, what):
    if mat.shape != (nrows, ncols):
        raise ValidationError(
            f"{what} has shape {mat.shape}, expected ({nrows}, {ncols})")
    return mat


def parse_problem(obj):
    """Problem-file JSON to :class:`~conegrad.embedding.ProblemData`."""
    _object(obj, "problem", ("n", "m", "cones", "P", "A", "q", "b"))
    n = _int(obj["n"], "problem.n")
    m = _int(obj["m"], "problem.m")
    cone = parse_cones(obj["cones"])
    if cone.dim != m:
        raise ValidationError(
            f"problem.m = {m} does not match the total cone dimension {cone.dim}")
    P = _check_shape(_parse_csc(obj["P"], "problem.P"), n, n, "problem.P")
    A = _check_shape(_parse_csc(obj["A"], "problem.A"), m, n, "problem.A")
    q = parse_vector(obj["q"], "problem.q", n)
    b = parse_vector(obj["b"], "problem.b", m)
    return ProblemData(P, A, q, b, cone)


def serialize_problem(theta):
    return {
        "n": theta.n,
        "m": theta.m,
        "cones": serialize_cones(theta.cone),
        "P": _serialize_csc(theta.P),
        "A": _serialize_csc(theta.A),
        "q": [float(v) for v in theta.q],
        "b": [float(v) for v in theta.b],
    }


def parse_solution(obj, n, m):
    _object(obj, "solution", ("x", "y", "s"))
    return Solution(
        parse_vector(obj["x"], "solution.x", n),
        parse_vector(obj["y"], "solution.y", m),
        parse_vector(obj["s"], "solution.s", m))


def serialize_solution(sol):
    return {
        "x": [float(v) for v in sol.x],
        "y": [float(v) for v in sol.y],
        "s": [float(v) for v in sol.s],
    }


def parse_perturbation(obj, n, m):
    _object(obj, "perturbation", ("dP", "dA", "dq", "db"))
    dP = _check_shape(_parse_csc(obj["dP"], "perturbation.dP"), n, n,
                      "perturbation.dP")
    dA = _check_shape(_parse_csc(obj["dA"], "perturbation.dA"), m, n,
                      "perturbation.dA")
    return DataPerturbation(
        dP, dA,
        parse_vector(obj["dq"], "perturbation.dq", n),
        parse_vector(obj["db"], "perturbation.db", m))


def serialize_perturbation(dtheta):
    return {
        "dP": _serialize_csc(dtheta.dP),
        "dA": _serialize_csc(dtheta.dA),
        "dq": [float(v) for v in dtheta.dq],
        "db": [float(v) for v in dtheta.db],
    }


def parse_delta(obj, n, m):
    _object(obj, "delta", ("dx", "dy", "ds"))
    return SolutionDelta(
        parse_vector(obj["dx"], "delta.dx", n),
        parse_vector(obj["dy"], "delta.dy", m),
        parse_vector(obj["ds"], "delta.ds", m))


def serialize_delta(delta):
    return {
        "dx": [float(v) for v in delta.dx],
        "dy": [float(v) for v in delta.dy],
        "ds": [float(v) for v in delta.ds],
    }


def _serialize_diagnostics(diag):
    return {
        "lsmr_iterations": diag.iterations,
        "lsmr_residual": diag.residual_norm,
        "converged": diag.converged,
        "derivative_unreliable": diag.derivative_unreliable,
        "kkt": None if diag.kkt is None else diag.kkt.as_dict(),
    }


def serialize_jvp_result(delta, diag):
    out = serialize_delta(delta)
    out["diagnostics"] = _serialize_diagnostics(diag)
    return out


def serialize_vjp_result(grad, diag):
    out = serialize_perturbation(grad)
    out["diagnostics"] = _serialize_diagnostics(diag)
    return out

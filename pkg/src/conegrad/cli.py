"""Command-line front end: ``conegrad <command> ...``.

Commands
--------
``jvp PROBLEM SOLUTION PERTURBATION``
    Directional derivative of the solution map; prints a result file with
    ``dx``/``dy``/``ds`` and solver diagnostics.
``vjp PROBLEM SOLUTION DELTA``
    Adjoint derivative; prints ``dP``/``dA``/``dq``/``db`` (on exactly the
    problem's sparsity patterns) and diagnostics.
``project CONES VECTOR [--dual] [--derivative DIRECTION]``
    Cone projection, optionally of the dual cone and with the projection
    derivative applied to a direction read from a third file.
``check PROBLEM SOLUTION [--tol TOL]``
    KKT residual report for a candidate solution (the report is the
    result; its ``ok`` field carries the verdict, the exit code does not).
``generate --seed S --n N --m M --cones FILE --density D``
    Write a synthesized problem/solution pair with an exactly known
    solution to ``--problem-out`` and ``--solution-out``.

Results go to stdout as JSON (``--output PATH`` also writes them to a
file); logs and error messages go to stderr.  With ``--json-errors``,
failures additionally print a single-line JSON object to stdout.

Exit codes: 0 success; 2 invalid input (files, dimensions, flags);
3 numerical failure; 4 the least-squares solve did not converge — the
result is still printed, flagged in its diagnostics.
"""

import argparse
import json
import sys

from conegrad import cones, jsonio
from conegrad.errors import ConegradError, NumericalError
from conegrad.solution_map import check_solution, jvp, vjp
from conegrad.testkit import GeneratorConfig, generate

_EXIT_VALIDATION = 2
_EXIT_NUMERICAL = 3
_EXIT_UNCONVERGED = 4


def _load_json(path, what):
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except OSError as exc:
        raise ConegradError(f"cannot read {what} file {path!r}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConegradError(f"{what} file {path!r} is not valid JSON: {exc}") from exc


def _dump_json(payload):
    return json.dumps(payload, indent=2, allow_nan=False)


def _write_file(text, path, what):
    try:
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")
    except OSError as exc:
        raise ConegradError(f"cannot write {what} file {path!r}: {exc}") from exc


def _emit(payload, output):
    text = _dump_json(payload)
    print(text)
    if output is not None:
        _write_file(text, output, "output")


def _load_problem_and_solution(args):
    problem = jsonio.parse_problem(_load_json(args.problem, "problem"))
    solution = jsonio.parse_solution(
        _load_json(args.solution, "solution"), problem.n, problem.m)
    return problem, solution


def _solver_options(args):
    return {
        "atol": args.atol,
        "btol": args.btol,
        "max_iter": args.max_iter,
        "check": not args.no_kkt_check,
    }


def _cmd_jvp(args):
    problem, solution = _load_problem_and_solution(args)
    dtheta = jsonio.parse_perturbation(
        _load_json(args.perturbation, "perturbation"), problem.n, problem.m)
    delta, diag = jvp(problem, solution, dtheta, **_solver_options(args))
    _emit(jsonio.serialize_jvp_result(delta, diag), args.output)
    return 0 if diag.converged else _EXIT_UNCONVERGED


def _cmd_vjp(args):
    problem, solution = _load_problem_and_solution(args)
    delta = jsonio.parse_delta(
        _load_json(args.delta, "delta"), problem.n, problem.m)
    grad, diag = vjp(problem, solution, delta, **_solver_options(args))
    _emit(jsonio.serialize_vjp_result(grad, diag), args.output)
    return 0 if diag.converged else _EXIT_UNCONVERGED


def _cmd_project(args):
    spec = jsonio.parse_cones(_load_json(args.cones, "cones"))
    point = jsonio.parse_vector(
        _load_json(args.vector, "vector"), "vector", spec.dim)
    projector = cones.project_dual if args.dual else cones.project
    payload = {"projection": [float(v) for v in projector(spec, point)]}
    if args.derivative is not None:
        direction = jsonio.parse_vector(
            _load_json(args.derivative, "direction"), "direction", spec.dim)
        prepare = cones.dprojection_dual if args.dual else cones.dprojection
        applied = prepare(spec, point).matvec(direction)
        payload["derivative"] = [float(v) for v in applied]
    _emit(payload, args.output)
    return 0


def _cmd_check(args):
    problem, solution = _load_problem_and_solution(args)
    report = check_solution(problem, solution, tol=args.tol)
    _emit(report.as_dict(), args.output)
    return 0


def _cmd_generate(args):
    spec = jsonio.parse_cones(_load_json(args.cones, "cones"))
    cfg = GeneratorConfig(
        args.seed, args.n, args.m, spec, density=args.density)
    theta, solution = generate(cfg)
    _write_file(_dump_json(jsonio.serialize_problem(theta)),
                args.problem_out, "problem")
    _write_file(_dump_json(jsonio.serialize_solution(solution)),
                args.solution_out, "solution")
    print(f"wrote problem to {args.problem_out} and solution to "
          f"{args.solution_out}", file=sys.stderr)
    return 0


def _add_common(parser):
    parser.add_argument(
        "--output", metavar="PATH",
        help="also write the result JSON to this file")
    parser.add_argument(
        "--json-errors", action="store_true",
        help="on failure, print a single-line JSON error object to stdout")


def _add_solver_flags(parser):
    parser.add_argument(
        "--atol", type=float, default=1e-10, metavar="TOL",
        help="least-squares operator tolerance (default 1e-10)")
    parser.add_argument(
        "--btol", type=float, default=1e-10, metavar="TOL",
        help="least-squares right-hand-side tolerance (default 1e-10)")
    parser.add_argument(
        "--max-iter", type=int, default=None, metavar="N",
        help="least-squares iteration cap (default: ten times the size)")
    parser.add_argument(
        "--no-kkt-check", action="store_true",
        help="skip the optimality pre-check of the supplied solution")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="conegrad",
        description="Derivatives of the solution map of quadratic cone programs.")
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser(
        "jvp", help="directional derivative of the solution map")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("solution", help="solution JSON file")
    p.add_argument("perturbation", help="data-perturbation JSON file")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_jvp)

    p = commands.add_parser(
        "vjp", help="adjoint derivative of the solution map")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("solution", help="solution JSON file")
    p.add_argument("delta", help="solution-space direction JSON file")
    _add_solver_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_vjp)

    p = commands.add_parser("project", help="cone projection")
    p.add_argument("cones", help="cone-list JSON file")
    p.add_argument("vector", help="point JSON file (bare array)")
    p.add_argument(
        "--dual", action="store_true", help="project onto the dual cone")
    p.add_argument(
        "--derivative", metavar="PATH",
        help="also apply the projection derivative to this direction file")
    _add_common(p)
    p.set_defaults(func=_cmd_project)

    p = commands.add_parser("check", help="KKT residual report")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("solution", help="solution JSON file")
    p.add_argument(
        "--tol", type=float, default=1e-6, metavar="TOL",
        help="acceptance threshold for each residual (default 1e-6)")
    _add_common(p)
    p.set_defaults(func=_cmd_check)

    p = commands.add_parser(
        "generate", help="synthesize a problem with a known solution")
    p.add_argument("--seed", type=int, required=True, help="generator seed")
    p.add_argument("--n", type=int, required=True, help="number of variables")
    p.add_argument(
        "--m", type=int, required=True,
        help="number of constraints (must equal the total cone dimension)")
    p.add_argument("--cones", required=True, help="cone-list JSON file")
    p.add_argument(
        "--density", type=float, default=0.3,
        help="expected fraction of stored entries (default 0.3)")
    p.add_argument(
        "--problem-out", required=True, metavar="PATH",
        help="where to write the problem file")
    p.add_argument(
        "--solution-out", required=True, metavar="PATH",
        help="where to write the solution file")
    p.add_argument(
        "--json-errors", action="store_true",
        help="on failure, print a single-line JSON error object to stdout")
    p.set_defaults(func=_cmd_generate)

    return parser


def main(argv=None):
    """Run one command; returns the process exit code."""
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConegradError as exc:
        numerical = isinstance(exc, NumericalError)
        code = _EXIT_NUMERICAL if numerical else _EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        if getattr(args, "json_errors", False):
            payload = {
                "error": str(exc),
                "kind": "numerical" if numerical else "validation",
                "code": code,
            }
            report = getattr(exc, "kkt", None)
            if report is not None:
                payload["kkt"] = report.as_dict()
            print(json.dumps(payload))
        return code


def entry():
    raise SystemExit(main())


if __name__ == "__main__":
    raise SystemExit(main())

"""Compare the compiled and pure-NumPy sparse kernels.

Times the raw CSC matrix-vector kernels and an end-to-end
Jacobian-vector product under each backend, and verifies that the two
backends return bit-identical results (they accumulate in the same
order, so equality is exact, not approximate).

Run from the repository root:

    python3 benchmarks/bench_backends.py [--repeats N] [--quick]
"""

import argparse
import statistics
import sys
import time

import numpy as np

from conegrad import _kernels
from conegrad.cones import ConeBlock, ConeSpec
from conegrad.embedding import DataPerturbation
from conegrad.solution_map import jvp
from conegrad.sparse import CscMatrix
from conegrad.testkit import GeneratorConfig, generate

SPMV_SHAPES = [
    # nrows, ncols, density
    (2000, 1000, 0.01),
    (8000, 4000, 0.005),
    (20000, 20000, 0.0005),
]
QUICK_SPMV_SHAPES = [(200, 100, 0.05)]

JVP_CASE = (ConeSpec([ConeBlock.soc(10)] * 20), 100, 200, 0.05, 78)
QUICK_JVP_CASE = (ConeSpec([ConeBlock.nonneg(6)]), 12, 6, 0.5, 42)


def random_csc(rng, nrows, ncols, density):
    """Random CSC matrix with ~density*nrows entries per column."""
    per_col = max(1, int(round(density * nrows)))
    rows = []
    col_ptr = np.zeros(ncols + 1, dtype=np.int64)
    for j in range(ncols):
        picked = rng.choice(nrows, size=per_col, replace=False)
        picked.sort()
        rows.append(picked)
        col_ptr[j + 1] = col_ptr[j] + per_col
    row_idx = np.concatenate(rows).astype(np.int64)
    values = rng.standard_normal(row_idx.shape[0])
    return CscMatrix(nrows, ncols, col_ptr, row_idx, values)


def random_perturbation(rng, theta):
    """Random direction on theta's sparsity patterns (dP symmetric)."""
    upper = {}
    for k in range(theta.P.nnz):
        i = int(theta.P.row_idx[k])
        j = int(theta.P.entry_cols()[k])
        key = (min(i, j), max(i, j))
        if key not in upper:
            upper[key] = rng.standard_normal()
    dp_values = np.array([
        upper[(min(int(theta.P.row_idx[k]), int(theta.P.entry_cols()[k])),
               max(int(theta.P.row_idx[k]), int(theta.P.entry_cols()[k])))]
        for k in range(theta.P.nnz)
    ])
    return DataPerturbation(
        theta.P.with_values(dp_values),
        theta.A.with_values(rng.standard_normal(theta.A.nnz)),
        rng.standard_normal(theta.n),
        rng.standard_normal(theta.m),
    )


def median_time(fn, repeats):
    """Median wall time of fn() over the given number of runs, in seconds."""
    times = []
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return statistics.median(times)


def fmt(seconds):
    if seconds < 1e-3:
        return f"{seconds * 1e6:8.1f} us"
    if seconds < 1.0:
        return f"{seconds * 1e3:8.2f} ms"
    return f"{seconds:8.2f} s "


def bench_spmv(shapes, repeats, out):
    rng = np.random.default_rng(0)
    for nrows, ncols, density in shapes:
        mat = random_csc(rng, nrows, ncols, density)
        x = rng.standard_normal(ncols)
        y = rng.standard_normal(nrows)
        results = {}
        timings = {}
        for backend in _kernels.available_backends():
            _kernels.use_backend(backend)
            results[backend] = (mat.matvec(x), mat.rmatvec(y))
            timings[backend] = (median_time(lambda: mat.matvec(x), repeats),
                                median_time(lambda: mat.rmatvec(y), repeats))
            times = timings[backend]
            out.write(f"spmv/adj {nrows}x{ncols} nnz={mat.nnz:>7}  "
                      f"{backend:>8}  {fmt(times[0])}  {fmt(times[1])}\n")
        names = sorted(results)
        identical = all(
            np.array_equal(results[names[0]][k], results[name][k])
            for name in names[1:] for k in (0, 1))
        if "compiled" in timings and "python" in timings:
            speedup = tuple(timings["python"][k] / timings["compiled"][k]
                            for k in (0, 1))
            out.write(f"    compiled speedup: {speedup[0]:.1f}x spmv, "
                      f"{speedup[1]:.1f}x adjoint\n")
        out.write(f"    backends bit-identical: "
                  f"{'yes' if identical else 'NO'}\n")
        if not identical:
            return False
    return True


def bench_jvp(case, repeats, out):
    spec, n, m, density, seed = case
    theta, sol = generate(GeneratorConfig(seed, n, m, spec, density=density),
                          margin=1e-3)
    dtheta = random_perturbation(np.random.default_rng(seed), theta)
    results = {}
    timings = {}
    for backend in _kernels.available_backends():
        _kernels.use_backend(backend)
        delta, diag = jvp(theta, sol, dtheta)
        results[backend] = (delta, diag)
        timings[backend] = median_time(lambda: jvp(theta, sol, dtheta),
                                       repeats)
        out.write(f"jvp n={n} m={m} ({diag.iterations} LSMR iterations)  "
                  f"{backend:>8}  {fmt(timings[backend])}\n")
    if "compiled" in timings and "python" in timings:
        out.write(f"    compiled speedup: "
                  f"{timings['python'] / timings['compiled']:.1f}x\n")
    names = sorted(results)
    identical = all(
        np.array_equal(getattr(results[names[0]][0], field),
                       getattr(results[name][0], field))
        and results[names[0]][1].iterations == results[name][1].iterations
        for name in names[1:] for field in ("dx", "dy", "ds"))
    out.write(f"    backends bit-identical: {'yes' if identical else 'NO'}\n")
    return identical


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Benchmark the compiled kernels against the pure-NumPy "
                    "fallback.")
    parser.add_argument("--repeats", type=int, default=7,
                        help="timing runs per measurement (median reported)")
    parser.add_argument("--quick", action="store_true",
                        help="tiny sizes, for smoke-testing the benchmark")
    args = parser.parse_args(argv)
    out = sys.stdout

    original = _kernels.active_backend()
    backends = _kernels.available_backends()
    out.write(f"available backends: {', '.join(backends)} "
              f"(default: {original})\n")
    if len(backends) == 1:
        out.write("compiled extension not built; timing the fallback only\n")
    try:
        shapes = QUICK_SPMV_SHAPES if args.quick else SPMV_SHAPES
        case = QUICK_JVP_CASE if args.quick else JVP_CASE
        ok = bench_spmv(shapes, args.repeats, out)
        ok &= bench_jvp(case, max(1, args.repeats // 2), out)
    finally:
        _kernels.use_backend(original)
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())

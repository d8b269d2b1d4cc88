"""Time the compiled and pure-Python Jacobi eigensolvers against LAPACK.

Usage: python benchmarks/bench_jacobi.py [--sizes 8 16 ...] [--repeats N]

Sizes default to the factor dimensions of the default network (11, 65,
129) plus a few neighbours. Each row reports the median wall time per
decomposition and the largest eigenvalue disagreement with LAPACK.
"""
import argparse
import statistics
import time

import numpy as np

from kldwrm import _jacobi_py

try:
    from kldwrm import _jacobi as _jacobi_c
except ImportError:  # extension not built
    _jacobi_c = None


def lapack(m):
    w, v = np.linalg.eigh(m)
    return w, v, 0


def median_time(fn, m, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(m)
        times.append(time.perf_counter() - t0)
    return statistics.median(times), out


def spd(rng, d):
    r = rng.standard_normal((d, 2 * d)) / np.sqrt(2 * d)
    return r @ r.T + 0.01 * np.eye(d)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[8, 11, 32, 65, 129, 160])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    kernels = {"python": _jacobi_py.jacobi_eigh, "lapack": lapack}
    if _jacobi_c is not None:
        kernels["compiled"] = _jacobi_c.jacobi_eigh
    else:
        print("compiled kernel not built; showing the fallback only")
    names = [k for k in ("compiled", "python", "lapack") if k in kernels]

    rng = np.random.default_rng(args.seed)
    header = f"{'n':>5} " + " ".join(f"{k + ' ms':>12}" for k in names)
    if "compiled" in kernels:
        header += f" {'py/compiled':>12}"
    header += f" {'max |dw|':>10}"
    print(header)
    for n in args.sizes:
        m = spd(rng, n)
        ref = np.linalg.eigvalsh(m)
        row, times, err = [], {}, 0.0
        for name in names:
            t, (w, _, _) = median_time(kernels[name], m, args.repeats)
            times[name] = t
            err = max(err, float(np.max(np.abs(np.sort(w) - ref))))
            row.append(f"{1e3 * t:12.3f}")
        line = f"{n:5d} " + " ".join(row)
        if "compiled" in times:
            line += f" {times['python'] / times['compiled']:12.1f}"
        print(line + f" {err:10.2e}")


if __name__ == "__main__":
    main()

"""Time the numba kernels against their pure-numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--csv out.csv]

Both variants are always importable from ``deepham.kernels`` regardless of
DEEPHAM_DISABLE_JIT; the flag only changes which one the package dispatches to.
"""
import argparse
import csv
import sys
import time

import numpy as np

from deepham import kernels
from deepham.kernels import CyclicFactor


def best_of(fn, repeat):
    fn()  # warm-up (includes JIT compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def cases(rng):
    for n, rows in ((64, 1), (64, 64), (256, 64), (1024, 64), (4096, 16)):
        h = 1.0 / n
        f = CyclicFactor(n, 2 * h / 3, h / 6)
        rhs = rng.normal(size=(rows, n))
        yield (f"cyclic_solve N={n} rows={rows}",
               lambda f=f, r=rhs: kernels.cyclic_solve_numpy(f, r),
               lambda f=f, r=rhs: kernels.cyclic_solve_numba(f, r))
    for n, nt, modes in ((32, 101, 1), (64, 101, 4), (256, 401, 8), (1024, 1001, 16)):
        a, b = rng.uniform(-1, 1, modes), rng.uniform(-1, 1, modes)
        t, x = np.linspace(0, 2, nt), np.arange(n) / n
        yield (f"dalembert_lattice N={n} T={nt} K={modes}",
               lambda a=a, b=b, t=t, x=x: kernels.dalembert_lattice_numpy(a, b, t, x),
               lambda a=a, b=b, t=t, x=x: kernels.dalembert_lattice_numba(a, b, t, x))


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=20)
    p.add_argument("--csv", help="also write results here")
    args = p.parse_args(argv)
    if not kernels.HAVE_NUMBA:
        print("numba is not importable; the numba column times the numpy fallback", file=sys.stderr)

    rng = np.random.default_rng(0)
    rows = []
    print(f"{'case':<38} {'numpy':>11} {'numba':>11} {'speedup':>8}")
    for name, slow, fast in cases(rng):
        ref, got = slow(), fast()
        for r, g in zip(ref if isinstance(ref, tuple) else (ref,), got if isinstance(got, tuple) else (got,)):
            np.testing.assert_allclose(g, r, rtol=1e-11, atol=1e-12)
        t_np, t_nb = best_of(slow, args.repeat), best_of(fast, args.repeat)
        rows.append((name, t_np, t_nb, t_np / t_nb))
        print(f"{name:<38} {1e6 * t_np:>9.1f}us {1e6 * t_nb:>9.1f}us {t_np / t_nb:>7.1f}x")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["case", "numpy_s", "numba_s", "speedup"])
            w.writerows(rows)


if __name__ == "__main__":
    main()

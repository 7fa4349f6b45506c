"""Compare the numba and numpy paths of the hot kernels.

    python benchmarks/bench_kernels.py --nx 1024 --steps 4096 --repeat 3
"""
import argparse
import json
import time

import numpy as np

from parahom._accel import numba_available, use_numba
from parahom.kernels import correlate_axis, march_tridiagonal


def bench_march(nx, steps, batch=512):
    rng = np.random.default_rng(0)
    a = 1.0 + 0.5 * rng.random((batch, nx))
    src = np.ones((batch, nx - 1))
    bnd = np.zeros((batch, 2))
    u = np.zeros(nx + 1)
    u_old = u.copy()
    out = np.empty((steps // 16 + 1, nx + 1))
    out_n = np.zeros(1, dtype=np.int64)
    step = 0
    while step < steps:
        nb = min(batch, steps - step)
        march_tridiagonal(u, u_old, a[:nb], src[:nb], bnd[:nb], 1e-4, 1.0 / nx, 1, step, 16, out, out_n)
        step += nb
    return u


def bench_correlate(nt, nx, r):
    rng = np.random.default_rng(1)
    field = rng.random((nt, nx))
    w = np.hanning(2 * r + 3)[1:-1]
    w /= w.sum()
    return correlate_axis(correlate_axis(field, w, 0, "reflect"), w, 1, "periodic")


def timed(fn, repeat):
    best = np.inf
    res = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        res = fn()
        best = min(best, time.perf_counter() - t0)
    return best, res


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nx", type=int, default=1024)
    ap.add_argument("--steps", type=int, default=4096)
    ap.add_argument("--nt", type=int, default=2048)
    ap.add_argument("--radius", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = {
        "march_tridiagonal": lambda: bench_march(args.nx, args.steps),
        "correlate_axis": lambda: bench_correlate(args.nt, args.nx, args.radius),
    }
    rows = []
    for name, fn in cases.items():
        timings = {}
        results = {}
        backends = [False, True] if numba_available() else [False]
        for flag in backends:
            with use_numba(flag):
                fn()  # warm-up (compilation for numba)
                timings[flag], results[flag] = timed(fn, args.repeat)
        row = {"kernel": name, "numpy_s": timings[False]}
        if True in timings:
            row["numba_s"] = timings[True]
            row["speedup"] = timings[False] / timings[True]
            row["max_abs_diff"] = float(np.max(np.abs(results[True] - results[False])))
        rows.append(row)
        print(json.dumps(row))


if __name__ == "__main__":
    main()

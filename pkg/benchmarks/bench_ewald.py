"""Compare the compiled and numpy torus Green-function kernels.

Usage: python3 benchmarks/bench_ewald.py [--points N] [--repeat R]
"""
import argparse
import time

import numpy as np

from meanfield import FlatTorus
from meanfield import _ewald_py
from meanfield.greens import HAVE_COMPILED, TorusGreen


def best_time(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--points", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    torus = FlatTorus([[1.0, 0.0], [0.3, 1.2]])
    rng = np.random.default_rng(0)
    y = torus.wrap(torus.random_points(rng, args.points))
    py = TorusGreen(torus, backend=_ewald_py)
    print(f"points={args.points} compiled_available={HAVE_COMPILED}")
    for order in (0, 1, 2):
        t_py = best_time(lambda: py.smooth(y, order), args.repeat)
        line = f"order={order} numpy={t_py:.3f}s"
        if HAVE_COMPILED:
            cy = TorusGreen(torus)
            t_cy = best_time(lambda: cy.smooth(y, order), args.repeat)
            a = py.smooth(y, order)
            b = cy.smooth(y, order)
            err = max(np.max(np.abs(u - v)) for u, v in zip(a, b) if u is not None)
            line += f" compiled={t_cy:.3f}s speedup={t_py / t_cy:.1f}x max_diff={err:.1e}"
        print(line)


if __name__ == "__main__":
    main()

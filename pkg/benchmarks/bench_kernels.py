"""Compare the compiled and numpy kernel backends on the hot loops.

Usage: python benchmarks/bench_kernels.py [--n 200000] [--repeat 3]
"""

import argparse
import time

import numpy as np

from funcmark import kernels
from funcmark.field import Sphere, bake_grid


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=200000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = kernels.available_backends()
    rng = np.random.default_rng(args.seed)
    grid = bake_grid(Sphere(), 64)
    t = np.ascontiguousarray(grid.to_index(rng.uniform(-1, 1, (args.n, 3))) + 2.0)
    p = rng.uniform(-1, 1, (args.n, 3))
    a, b, c = (np.ascontiguousarray(rng.uniform(-1, 1, (args.n, 3))) for _ in range(3))

    cases = [(f"bspline order {k}", lambda m, k=k: m.bspline_eval(grid._coef, t, k)) for k in (0, 1, 2)]
    cases.append(("closest point", lambda m: m.closest_point_triangle(p, a, b, c)))

    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name in backends) + f"{'speedup':>10}{'max diff':>12}")
    for label, fn in cases:
        row, outs = {}, {}
        for name, mod in backends.items():
            row[name], outs[name] = best_of(lambda: fn(mod), args.repeat)
        diff = float("nan")
        speed = float("nan")
        if len(outs) == 2:
            x, y = outs["python"], outs["cython"]
            diff = max(float(np.max(np.abs(u - v))) for u, v in zip(x, y) if u is not None)
            speed = row["python"] / row["cython"]
        print(f"{label:<18}" + "".join(f"{row[n] * 1e3:>10.1f}ms" for n in backends)
              + f"{speed:>9.1f}x{diff:>12.2e}")


if __name__ == "__main__":
    main()

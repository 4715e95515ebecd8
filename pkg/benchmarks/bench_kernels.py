"""Compiled vs pure-Python kernel timings.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import timeit

import numpy as np

from lie_svi import _backend


def cases(rng):
    xi, xidot = rng.normal(size=(13, 3)) * 0.3, rng.normal(size=(13, 3))
    inertia = np.array([3.3, 2.5, 3.4])
    u, rho = np.array([0.0, 0.0, 9.81]), np.array([0.0, 0.0, 1.0])
    R0, y0 = np.eye(3), inertia * np.array([2.0, -1.9, 1.0])
    return {
        "lagrangian_terms (13 points)": lambda k: k.lagrangian_terms(xi, xidot, inertia, u, rho, True),
        "split_rigid_body (20000 steps)": lambda k: k.split_rigid_body(
            R0, y0, inertia, 1e-4, 20_000, 9.81, rho, True, 20_000),
    }


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = {"pure": _backend.get("pure")}
    try:
        backends["compiled"] = _backend.get("compiled")
    except ImportError:
        print("compiled extension not built; timing the pure kernels only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':34s}" + "".join(f"{b:>14s}" for b in backends) + "   speedup")
    for name, fn in cases(rng).items():
        best = {}
        for b, mod in backends.items():
            timer = timeit.Timer(lambda: fn(mod))
            number, _ = timer.autorange()
            best[b] = min(timer.repeat(args.repeat, number)) / number
        line = f"{name:34s}" + "".join(f"{best[b] * 1e3:12.3f}ms" for b in backends)
        if "compiled" in best:
            line += f"   {best['pure'] / best['compiled']:6.1f}x"
        print(line)


if __name__ == "__main__":
    main()

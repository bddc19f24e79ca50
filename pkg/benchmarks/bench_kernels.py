"""Compare the compiled and NumPy proximal kernels.

Times each kernel on a random face field and a full L^a solve with each
backend swapped in. Usage::

    python3 benchmarks/bench_kernels.py --faces 200000 --grid 64
"""

from __future__ import annotations

import argparse
import timeit

import numpy as np

from fluxopt import kernels
from fluxopt.grid import build_grid
from fluxopt.problem import BalanceProblem
from fluxopt.solver_lq import solve_lq


def best_of(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_cases(n: int, rng: np.random.Generator):
    v = rng.standard_normal(n)
    w = rng.uniform(0.5, 1.0, n)
    cases = {f"prox_power a={a}": (lambda m, a=a: m.prox_power(v, 0.7, a)) for a in (1.5, 3.0, 4.5)}
    cases["prox_linf"] = lambda m: m.prox_linf(v, 0.7, w)
    return cases


def random_problem(side: int, rng: np.random.Generator) -> BalanceProblem:
    g = build_grid([side, side], [1.0 / side] * 2)
    beta = rng.standard_normal(g.n_cells)
    tau = rng.standard_normal(g.n_boundary)
    beta -= (g.volume * beta.sum() + np.dot(g.boundary.area, tau)) / g.total_volume
    return BalanceProblem(g, beta, tau)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--faces", type=int, default=200_000)
    parser.add_argument("--grid", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    backends = {"python": kernels.get_backend("python")}
    try:
        backends["compiled"] = kernels.get_backend("compiled")
    except ImportError:
        print("compiled extension not built; timing the NumPy backend only")

    print(f"kernels on {args.faces} faces (best of {args.repeat}, ms)")
    for name, case in kernel_cases(args.faces, rng).items():
        times = {b: 1e3 * best_of(lambda: case(m), args.repeat) for b, m in backends.items()}
        row = "  ".join(f"{b} {t:8.2f}" for b, t in times.items())
        ratio = f"  speedup {times['python'] / times['compiled']:.2f}x" if "compiled" in times else ""
        print(f"  {name:18s} {row}{ratio}")

    problem = random_problem(args.grid, rng)
    print(f"solve_lq on {args.grid}x{args.grid} (best of {args.repeat}, ms)")
    saved = kernels._impl
    try:
        for a in (1.5, 3.0, np.inf):
            times = {}
            for b, m in backends.items():
                kernels._impl = m
                times[b] = 1e3 * best_of(lambda: solve_lq(problem, a), args.repeat)
            row = "  ".join(f"{b} {t:8.2f}" for b, t in times.items())
            print(f"  a={a:<6} {row}")
    finally:
        kernels._impl = saved


if __name__ == "__main__":
    main()

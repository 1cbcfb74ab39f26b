"""Compare the compiled pivot kernel against the pure-Python reference.

Both kernels implement the same simplex inner loop with identical
arithmetic, so mechanism output must match exactly; what differs is wall
time. This script swaps the kernel binding inside the solver, runs the
full mechanism on generated instances of a few sizes, and prints one
table row per size. Run from the repository root:

    python3 benchmarks/kernel_benchmark.py [--sizes 40,80,120] [--trials 3]
"""

import argparse
import importlib
import time

import numpy as np

from drfmt import bench
from drfmt.lp import solver
from drfmt.mechanism import run
from drfmt.model import normalize

STRUCTURE = (1, 2, 3)
SEED = 7


def _load_kernels():
    kernels = {}
    try:
        kernels["compiled"] = importlib.import_module(
            "drfmt.lp._kernel").simplex_loop
    except ImportError:
        pass
    kernels["python"] = importlib.import_module(
        "drfmt.lp._kernel_py").simplex_loop
    return kernels


def _time_backend(loop, instances, trials):
    original = solver.simplex_loop
    solver.simplex_loop = loop
    try:
        walls = []
        utilities = []
        for inst in instances:
            best = float("inf")
            for _ in range(trials):
                t0 = time.perf_counter()
                result = run(inst)
                best = min(best, time.perf_counter() - t0)
            walls.append(best)
            utilities.append(result.utilities)
        return walls, utilities
    finally:
        solver.simplex_loop = original


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="40,80,120",
                    help="comma-separated agent counts")
    ap.add_argument("--trials", type=int, default=3,
                    help="timed repetitions per instance; the best is kept")
    args = ap.parse_args(argv)
    sizes = [int(s) for s in args.sizes.split(",") if s.strip()]

    kernels = _load_kernels()
    if "compiled" not in kernels:
        print("compiled kernel not importable; timing the pure-Python "
              "kernel against itself is pointless, aborting")
        return 1

    instances = [normalize(bench.generate_instance(SEED, n, STRUCTURE))
                 for n in sizes]

    results = {name: _time_backend(loop, instances, args.trials)
               for name, loop in kernels.items()}

    for (u_compiled, u_python) in zip(results["compiled"][1],
                                      results["python"][1]):
        if not np.array_equal(u_compiled, u_python):
            print("MISMATCH: kernels disagree on mechanism output")
            return 1

    print(f"{'agents':>8} {'compiled s':>12} {'python s':>12} {'ratio':>8}")
    for i, n in enumerate(sizes):
        tc = results["compiled"][0][i]
        tp = results["python"][0][i]
        print(f"{n:>8} {tc:>12.4f} {tp:>12.4f} {tp / tc:>8.2f}")
    print("outputs identical across kernels on every instance")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

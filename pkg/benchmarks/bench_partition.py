"""Time the compiled partition kernel against the pure-Python fallback.

    python benchmarks/bench_partition.py [--n 2000] [--d 10] [--trees 50] [--repeat 3]

Both backends must produce bit-identical weight sums; the script checks
that before reporting timings.
"""

import argparse
import sys
import time

import numpy as np

from manifold_cate._backend import compiled_accumulate_weights, python_accumulate_weights
from manifold_cate.data import ManifoldSpec, OutcomeModel, generate_dataset, sample_test_points
from manifold_cate.forest import ForestConfig, build_forest
from manifold_cate.smoother import KernelSpec, default_bandwidth, support_units


def _setup(n, d, trees):
    data, _ = generate_dataset(ManifoldSpec("circle", d=d), OutcomeModel(), n, 0)
    h = default_bandwidth(n, 1, "mse")
    forest = build_forest(data, 0, ForestConfig(B=trees), h, m=1)
    xs = sample_test_points(ManifoldSpec("circle", d=d), 5, 999)
    units = support_units(data, KernelSpec(), h, xs)
    units = units[data.D[units] == 1]
    pool = data.arm(0)
    col_of = np.full(n, -1, dtype=np.int64)
    col_of[pool] = np.arange(pool.size)
    return forest, np.ascontiguousarray(data.X[units]), col_of, pool.size


def _run(fn, forest, XQ, col_of, ncols):
    W = np.zeros((XQ.shape[0], ncols))
    used = np.zeros(XQ.shape[0], dtype=np.int64)
    c = forest.config
    fn(forest.X, forest.box_lo, forest.box_hi, forest.bound ** 2, forest.honest, c.max_depth,
       c.min_leaf, c.seed, forest.key_arm, forest.est_idx, forest.struct_idx,
       np.arange(forest.B, dtype=np.int64), XQ, col_of, W, used)
    return W, used


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--d", type=int, default=10)
    p.add_argument("--trees", type=int, default=50)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if compiled_accumulate_weights is None:
        print("compiled extension not built; only the Python fallback is available", file=sys.stderr)
        return 1
    setup = _setup(args.n, args.d, args.trees)
    print(f"n={args.n} d={args.d} trees={args.trees} queries={setup[1].shape[0]}")
    results = {}
    for name, fn in [("cython", compiled_accumulate_weights), ("python", python_accumulate_weights)]:
        best = float("inf")
        for _ in range(args.repeat):
            t0 = time.perf_counter()
            out = _run(fn, *setup)
            best = min(best, time.perf_counter() - t0)
        results[name] = (best, out)
        print(f"{name:>7}: {best * 1e3:10.2f} ms (best of {args.repeat})")
    same = all(np.array_equal(a, b) for a, b in zip(results["cython"][1], results["python"][1]))
    print(f"bit-identical: {same}")
    print(f"speedup: {results['python'][0] / results['cython'][0]:.1f}x")
    return 0 if same else 2


if __name__ == "__main__":
    sys.exit(main())

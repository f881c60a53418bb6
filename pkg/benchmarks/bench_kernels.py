"""Benchmark the JIT-compiled divergence kernels against the numpy fallback.

Usage:
    python benchmarks/bench_kernels.py [--pairs 200000] [--dim 64]

The same comparison can be forced package-wide at runtime by setting
ONTOGUARD_DISABLE_NUMBA=1 before importing ontoguard.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from ontoguard import kernels


def bench(fn, ps, qs, repeats=5):
    fn(ps[:16], qs[:16])  # warm-up / JIT compile outside the timed region
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        out = fn(ps, qs)
        best = min(best, time.perf_counter() - start)
    return best, out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--pairs", type=int, default=200_000)
    parser.add_argument("--dim", type=int, default=64)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    ps = rng.random((args.pairs, args.dim))
    qs = rng.random((args.pairs, args.dim))
    ps /= ps.sum(axis=1, keepdims=True)
    qs /= qs.sum(axis=1, keepdims=True)

    rows = [("numpy", kernels._jsd_rows_numpy)]
    if kernels.USING_NUMBA:
        rows.append(("numba", kernels._jsd_rows_nb))
    else:
        print("numba path unavailable (disabled by flag or import failure); "
              "benchmarking numpy only")

    results = {}
    print(f"row-wise base-2 JSD over {args.pairs} pairs of dim {args.dim}")
    print(f"{'path':<8}{'best time':>12}{'pairs/sec':>16}")
    for name, fn in rows:
        elapsed, out = bench(fn, ps, qs, args.repeats)
        results[name] = out
        print(f"{name:<8}{elapsed:>11.4f}s{args.pairs / elapsed:>16,.0f}")

    if len(results) == 2:
        delta = float(np.abs(results["numba"] - results["numpy"]).max())
        print(f"max |numba - numpy| = {delta:.3e}")
        assert delta < 1e-12, "kernel paths disagree"


if __name__ == "__main__":
    main()

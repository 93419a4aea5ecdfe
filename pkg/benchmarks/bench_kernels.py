"""Benchmark the numba-compiled kernels against the pure-numpy path.

Run: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from robustboost import kernels


def make_case(m=200, d=4, k=5, n_stumps=4000, n_grid=20_000, seed=0):
    gen = np.random.default_rng(seed)
    X = gen.normal(size=(m, d))
    y = gen.integers(0, k, size=m).astype(np.int64)
    pair_i = np.repeat(np.arange(m), k - 1).astype(np.int64)
    pair_y = np.concatenate([[c for c in range(k) if c != yi] for yi in y]).astype(np.int64)
    feat = gen.integers(0, d, size=n_stumps).astype(np.int64)
    thr = gen.normal(size=n_stumps)
    left = gen.integers(0, k, size=n_stumps).astype(np.int64)
    right = gen.integers(0, k, size=n_stumps).astype(np.int64)
    w = gen.random(60)
    w /= w.sum()
    Z = gen.uniform(-0.3, 0.3, size=(n_grid, d))
    return dict(
        stump_pair_losses=(X, y, pair_i, pair_y, feat, thr, left, right, 0.3),
        stump_ova_losses=(X, y, feat, thr, left, right, 0.3),
        stump_mixture_vote_ok=(X, y, feat[:60], thr[:60], left[:60], right[:60], w, Z, k),
    )


def timeit(fn, args, repeat):
    fn(*args)  # warm up / JIT compile
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    cases = make_case()
    print(f"numba enabled: {kernels.USE_NUMBA}")
    print(f"{'kernel':<28}{'python (s)':>12}{'jit (s)':>12}{'speedup':>9}")
    for name, call_args in cases.items():
        py = timeit(kernels.PY_IMPLS[name], call_args, args.repeat)
        if kernels.USE_NUMBA:
            jit = timeit(getattr(kernels, name), call_args, args.repeat)
            print(f"{name:<28}{py:>12.4f}{jit:>12.4f}{py / jit:>8.1f}x")
        else:
            print(f"{name:<28}{py:>12.4f}{'-':>12}{'-':>9}")


if __name__ == "__main__":
    main()

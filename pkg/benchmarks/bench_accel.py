"""
Compare the numba-compiled kernels with their numpy counterparts.

Run with ``python benchmarks/bench_accel.py``. Compilation happens once in a
warm-up call and is not timed.
"""

import argparse
import time

import numpy as np

from kfa.kernels import _l1dist_numba, _l1dist_numpy, _sqdist_numba, _sqdist_numpy
from kfa.stats import mmd2_batch, permutations


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--sizes", type=int, nargs="+", default=[500, 2000])
    ap.add_argument("--dim", type=int, default=10)
    ap.add_argument("--perms", type=int, default=199)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    print(f"{'task':<22}{'n':>7}{'numba s':>11}{'numpy s':>11}{'ratio':>8}")
    for n in args.sizes:
        X = rng.standard_normal((n, args.dim))
        K = np.exp(-0.5 * _sqdist_numpy(X, X))
        labels = np.arange(n) < n // 2
        P = permutations(labels, args.perms, seed=0)
        tasks = {
            "squared distances": (lambda: _sqdist_numba(X, X), lambda: _sqdist_numpy(X, X)),
            "l1 distances": (lambda: _l1dist_numba(X, X), lambda: _l1dist_numpy(X, X)),
            "permutation MMD^2": (lambda: mmd2_batch(K, P, backend="numba"),
                                  lambda: mmd2_batch(K, P, backend="numpy")),
        }
        for name, (fast, ref) in tasks.items():
            a = best_of(fast, args.repeat)
            b = best_of(ref, args.repeat)
            print(f"{name:<22}{n:>7}{a:>11.4f}{b:>11.4f}{b / a:>8.2f}")


if __name__ == "__main__":
    main()

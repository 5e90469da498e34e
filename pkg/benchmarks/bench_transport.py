"""Time the transport kernel: compiled extension vs the numpy fallback.

Both implementations of ordered_exp_product are imported directly, so the
comparison runs in one process regardless of which backend the package
selected. Checks agreement before timing; a benchmark of two functions that
disagree measures nothing.

Usage: python3 benchmarks/bench_transport.py [--segments N] [--repeats R]
"""

import argparse
import time

import numpy as np

from folirec import _transport_py
from folirec.kernels import backend_name

try:
    from folirec import _transport
except ImportError:
    _transport = None


def _workload(n_segments, dim, seed):
    rng = np.random.default_rng(seed)
    omegas = 0.5 * rng.standard_normal((n_segments, dim, dim))
    dts = rng.uniform(0.005, 0.02, size=n_segments)
    return omegas, dts


def _best_of(fn, omegas, dts, repeats):
    best = np.inf
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(omegas, dts)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--segments", type=int, default=200000,
                        help="transport substeps per call (default 200000)")
    parser.add_argument("--repeats", type=int, default=5,
                        help="timed repetitions, best-of (default 5)")
    args = parser.parse_args()

    print(f"package backend: {backend_name()}")
    if _transport is None:
        print("compiled extension not importable; nothing to compare")
        return 1

    for dim in (1, 2):
        omegas, dts = _workload(args.segments, dim, seed=dim)
        ref = _transport_py.ordered_exp_product(omegas, dts)
        out = _transport.ordered_exp_product(omegas, dts)
        gap = float(np.max(np.abs(out - ref)))
        # roundoff grows with the number of multiplied factors
        tol = 1e-15 * args.segments * max(1.0, float(np.max(np.abs(ref))))
        if gap > tol:
            print(f"dim {dim}: backends disagree by {gap:.3e}, aborting")
            return 1
        t_py = _best_of(_transport_py.ordered_exp_product, omegas, dts,
                        args.repeats)
        t_c = _best_of(_transport.ordered_exp_product, omegas, dts,
                       args.repeats)
        print(f"dim {dim}: {args.segments} segments  "
              f"numpy {1e3 * t_py:8.2f} ms  "
              f"compiled {1e3 * t_c:8.2f} ms  "
              f"speedup {t_py / t_c:5.1f}x  (max diff {gap:.1e})")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

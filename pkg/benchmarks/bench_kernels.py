"""Timing of the compiled kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--n 200000] [--repeat 20]

Prints one line per kernel with the best-of-``repeat`` time of each backend
and the speed-up.  Both backends are run on identical inputs and their
results are compared before timing.
"""
import argparse
import timeit

import numpy as np

from sacdrop.kernels import get_backend


def inputs(n, seed=0):
    rng = np.random.default_rng(seed)
    px = rng.uniform(-1.5, 1.5, n)
    py = rng.uniform(-1.5, 1.5, n)
    w = rng.uniform(0.5, 1.5, n) / n
    field = rng.uniform(-1.1, 1.1, n)
    noise = rng.normal(0.0, 1e-3, n)
    return px, py, w, field, noise


def cases(mod, n):
    px, py, w, field, noise = inputs(n)
    buf = np.empty(n)
    out = np.empty(n)
    return {
        "droplet_profile": lambda: mod.droplet_profile(px, py, w, 0.1, -0.2, 1.0, 0.05, 0.9, buf),
        "imex_rhs": lambda: mod.imex_rhs(field, w, 0.1, noise, out),
        "potential_sum": lambda: mod.potential_sum(field, w),
    }


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--n", type=int, default=200_000, help="number of nodes")
    p.add_argument("--repeat", type=int, default=20, help="timing repetitions")
    args = p.parse_args(argv)
    py = cases(get_backend("python"), args.n)
    try:
        cy = cases(get_backend("cython"), args.n)
    except ImportError:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':<16} {'python [ms]':>12} {'cython [ms]':>12} {'speed-up':>9}")
    for name in py:
        a, b = py[name](), cy[name]()
        a = np.asarray(a[0] if isinstance(a, tuple) else a)
        b = np.asarray(b[0] if isinstance(b, tuple) else b)
        if not np.allclose(a, b, rtol=1e-12, atol=1e-12):
            raise SystemExit(f"{name}: backends disagree")
        tp = min(timeit.repeat(py[name], number=1, repeat=args.repeat)) * 1e3
        tc = min(timeit.repeat(cy[name], number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {tp:12.3f} {tc:12.3f} {tp / tc:9.2f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

"""Compare the compiled and numpy projector kernels.

Usage::

    python benchmarks/bench_kernels.py [--sizes 32 64 128] [--p 32] [--repeat 20]

Prints the median wall time per call of forward and adjoint for each
backend, plus the max abs difference between the two. The first call per
angle set builds the weight tables; it is excluded from the timings and
reported separately as ``setup``.
"""

import argparse
import statistics
import time

import numpy as np

from redpsm import _radon_py

try:
    from redpsm import _radon_ext
except ImportError:
    _radon_ext = None


def _time(fn, repeat):
    out = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        out.append(time.perf_counter() - t0)
    return statistics.median(out)


def bench(n, p, repeat, seed=0):
    rng = np.random.default_rng(seed)
    images = rng.random((p, n, n))
    sino = rng.random((p, n))
    # distinct angles per size so the table caches start cold
    angles = np.sort(rng.uniform(0.0, np.pi, p))
    rows = []
    backends = [("python", _radon_py)] + ([("cython", _radon_ext)] if _radon_ext else [])
    results = {}
    for name, mod in backends:
        t0 = time.perf_counter()
        fwd = mod.forward(images, angles)
        setup = time.perf_counter() - t0
        adj = mod.adjoint(sino, angles, n)
        results[name] = (fwd, adj)
        tf = _time(lambda: mod.forward(images, angles), repeat)
        ta = _time(lambda: mod.adjoint(sino, angles, n), repeat)
        rows.append((name, n, p, setup, tf, ta))
    diff = None
    if len(results) == 2:
        (f1, a1), (f2, a2) = results.values()
        diff = max(np.abs(f1 - f2).max(), np.abs(a1 - a2).max())
    return rows, diff


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128])
    ap.add_argument("--p", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if _radon_ext is None:
        print("compiled extension not built; timing the numpy kernels only")
    print(f"{'backend':>8} {'n':>5} {'p':>4} {'setup ms':>10} {'forward ms':>11} {'adjoint ms':>11}")
    for n in args.sizes:
        rows, diff = bench(n, args.p, args.repeat)
        for name, nn, p, setup, tf, ta in rows:
            print(f"{name:>8} {nn:5d} {p:4d} {1e3 * setup:10.2f} {1e3 * tf:11.3f} {1e3 * ta:11.3f}")
        if diff is not None:
            py, cy = rows[0], rows[1]
            print(f"{'':>8} speedup forward x{py[4] / cy[4]:.1f}, adjoint x{py[5] / cy[5]:.1f}; "
                  f"max abs diff {diff:.1e}")


if __name__ == "__main__":
    main()

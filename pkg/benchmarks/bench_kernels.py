"""Time the compiled and numpy kernel backends on generator-sized inputs.

Usage::

    python benchmarks/bench_kernels.py [--repeat 20] [--batch 8]

Prints one line per (kernel, backend) with the median wall time and the
speed-up of the compiled backend. Outputs are also checked for equality.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from qfuse import kernels


def median_time(fn, repeat):
    fn()  # warm-up
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(batch, rng):
    """(label, {backend_name: callable}) pairs for the hot kernels."""
    out = []
    for c, size in ((16, 64), (64, 16)):
        xp = rng.standard_normal((batch, c, size + 2, size + 2)).astype(np.float32)
        cols_shape = (c, 3, 3, batch, size, size)
        cols = rng.standard_normal(cols_shape).astype(np.float32)
        out.append((f"im2col   C={c:<3d} {size}x{size}", lambda m, xp=xp, s=size: m.im2col(xp, 3, 3, 1, s, s)))
        out.append((f"col2im   C={c:<3d} {size}x{size}", lambda m, cols=cols, s=size: m.col2im(cols, s + 2, s + 2, 1)))
        x = rng.standard_normal((batch, c, size, size)).astype(np.float32)
        out.append((f"pool fwd C={c:<3d} {size}x{size}", lambda m, x=x: m.maxpool2x2_forward(x)))
        g = rng.standard_normal((batch, c, size // 2, size // 2)).astype(np.float32)
        _, arg = kernels.backends()["python"].maxpool2x2_forward(x)
        out.append((f"pool bwd C={c:<3d} {size}x{size}", lambda m, g=g, arg=arg: m.maxpool2x2_backward(g, arg)))
    return out


def same(a, b):
    if isinstance(a, tuple):
        return all(np.array_equal(x, y) for x, y in zip(a, b))
    return np.array_equal(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=8)
    args = ap.parse_args(argv)

    impls = kernels.backends()
    if "cython" not in impls:
        print("compiled backend not built; timing the numpy fallback only")
    rng = np.random.default_rng(0)
    print(f"{'kernel':24s} {'backend':8s} {'median ms':>10s} {'speed-up':>9s}")
    for label, call in cases(args.batch, rng):
        ref = None
        base = None
        for name in ("python", "cython"):
            if name not in impls:
                continue
            mod = impls[name]
            result = call(mod)
            if ref is None:
                ref = result
            elif not same(ref, result):
                raise SystemExit(f"{label}: backends disagree")
            t = median_time(lambda: call(mod), args.repeat)
            base = base or t
            print(f"{label:24s} {name:8s} {t * 1e3:10.3f} {base / t:8.1f}x")


if __name__ == "__main__":
    main()

"""Time the compiled and NumPy selective-scan kernels on the same inputs.

Usage::

    python3 benchmarks/bench_scan.py [--repeats 5] [--dtype float32]

Shapes follow the scans inside the micro training model: four directions
times the batch as sequences, the 12x12 low band as the sequence, and the
expanded channel width. Results are checked for agreement before timing.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from wmsr.sscan import kernels

# (sequences, length, channels, state)
SHAPES = [(16, 144, 64, 16), (16, 576, 64, 16), (4, 1024, 32, 8)]


def make_inputs(rng, bt, L, d, n, dtype, groups=4):
    return [
        rng.standard_normal((bt, L, d)),
        rng.uniform(0.001, 0.1, (bt, L, d)),
        -rng.uniform(1.0, 16.0, (groups, d, n)),
        rng.standard_normal((bt, L, n)),
        rng.standard_normal((bt, L, n)),
        rng.standard_normal((groups, d)),
    ], dtype


def best_of(fn, repeats):
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def bench(backend, args, repeats):
    k = kernels.get(backend)
    y, saved = k.scan_forward(*args, True)
    gy = np.ones_like(y)
    fwd = best_of(lambda: k.scan_forward(*args, True), repeats)
    bwd = best_of(lambda: k.scan_backward(gy, *args, saved), repeats)
    return y, fwd, bwd


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    ap.add_argument("--seed", type=int, default=0)
    opts = ap.parse_args(argv)
    if "cython" not in kernels.BACKENDS:
        print("compiled extension not built; only the NumPy kernel is available")
    rng = np.random.default_rng(opts.seed)
    print(f"{'shape (Bt,L,D,N)':<22}{'backend':<9}{'forward ms':>12}{'backward ms':>13}{'speedup':>9}")
    for shape in SHAPES:
        raw, _ = make_inputs(rng, *shape, opts.dtype)
        args = [a.astype(opts.dtype) for a in raw]
        results = {name: bench(name, args, opts.repeats) for name in sorted(kernels.BACKENDS)}
        base = results["python"][1] + results["python"][2]
        ref = results["python"][0]
        for name, (y, fwd, bwd) in results.items():
            tol = 1e-4 if opts.dtype == "float32" else 1e-10
            if not np.allclose(y, ref, rtol=tol, atol=tol):
                raise SystemExit(f"{name} disagrees with the NumPy kernel on {shape}")
            print(f"{str(shape):<22}{name:<9}{fwd * 1e3:>12.2f}{bwd * 1e3:>13.2f}{base / (fwd + bwd):>8.1f}x")


if __name__ == "__main__":
    main()

"""Compare the compiled kernels with the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 3]
"""
import argparse
import time

import numpy as np

from magweyl import _kernels_py as pyk

try:
    from magweyl import _kernels as ck
except ImportError:
    ck = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    cases = []
    for N in (16, 32, 48):
        x = -4 + 8 / N * np.arange(N)
        pts = np.ascontiguousarray(np.stack([m.ravel() for m in np.meshgrid(x, x, indexing="ij")], axis=-1))
        a0, G = np.zeros(2), np.array([[0.0, -0.5], [0.5, 0.0]])
        cases.append((f"affine_phase 2D N={N}", lambda m, p=pts: m.affine_phase(p, a0, G)))
    for M in (256, 1024):
        ys = rng.uniform(-2, 2, (M, 2))
        F = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
        B0 = np.array([[0.0, 1.0], [-1.0, 0.0]])
        Bg = np.zeros((2, 2, 2))
        Bg[0, 1] = [0.2, 0.1]
        Bg[1, 0] = -Bg[0, 1]
        x = np.zeros(2)
        cases.append((f"flux_sum M={M}", lambda m, y=ys, f=F: m.flux_sum(y, y, x, B0, Bg, f, f)))
    print(f"{'kernel':<24}{'numpy [s]':>12}{'cython [s]':>12}{'speedup':>10}{'max diff':>12}")
    for name, fn in cases:
        tp, vp = best_of(lambda: fn(pyk), args.repeat)
        if ck is None:
            print(f"{name:<24}{tp:12.4f}{'n/a':>12}")
            continue
        tc, vc = best_of(lambda: fn(ck), args.repeat)
        diff = float(np.max(np.abs(np.asarray(vp) - np.asarray(vc))))
        print(f"{name:<24}{tp:12.4f}{tc:12.4f}{tp / tc:10.2f}{diff:12.2e}")


if __name__ == "__main__":
    main()

"""Benchmark the compiled metric kernels against the numpy fallback.

Runs each hot kernel (SSIM window scan, joint histogram, replicate-padded
convolution) on identical inputs through both backends, checks they agree,
and reports wall-clock timings.

Usage: python3 benchmarks/bench_metrics.py [--size 256] [--repeats 20]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from obfnet._kernels import metrics_np

try:
    from obfnet._kernels import _metrics_cy
except ImportError:
    _metrics_cy = None


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=256)
    parser.add_argument("--repeats", type=int, default=20)
    args = parser.parse_args()

    if _metrics_cy is None:
        print("compiled backend not built (OBFNET_SKIP_EXT?); nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    n = args.size
    a = rng.random((n, n))
    b = rng.random((n, n))
    img = rng.random((n, n))
    kernel = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])

    cases = [
        (
            "ssim_channel",
            lambda: metrics_np.ssim_channel(a, b, 7),
            lambda: _metrics_cy.ssim_channel(a, b, 7),
            lambda x, y: abs(x - y),
        ),
        (
            "joint_histogram",
            lambda: metrics_np.joint_histogram(a.ravel(), b.ravel(), 100),
            lambda: _metrics_cy.joint_histogram(a.ravel(), b.ravel(), 100),
            lambda x, y: float(np.abs(np.asarray(x) - np.asarray(y)).max()),
        ),
        (
            "conv2d_replicate",
            lambda: metrics_np.conv2d_replicate(img, kernel),
            lambda: _metrics_cy.conv2d_replicate(img, kernel),
            lambda x, y: float(np.abs(np.asarray(x) - np.asarray(y)).max()),
        ),
    ]

    print(f"input {n}x{n}, best of {args.repeats} runs")
    print(f"{'kernel':<18} {'numpy':>10} {'cython':>10} {'speedup':>8} {'max |diff|':>11}")
    ok = True
    for name, np_fn, cy_fn, diff in cases:
        t_np, r_np = timeit(np_fn, args.repeats)
        t_cy, r_cy = timeit(cy_fn, args.repeats)
        d = diff(r_np, r_cy)
        ok = ok and d < 1e-9
        print(
            f"{name:<18} {t_np * 1e3:>8.2f}ms {t_cy * 1e3:>8.2f}ms "
            f"{t_np / t_cy:>7.1f}x {d:>11.2e}"
        )
    print("backends agree" if ok else "BACKENDS DISAGREE")
    return 0 if ok else 1


if __name__ == "__main__":
    raise SystemExit(main())

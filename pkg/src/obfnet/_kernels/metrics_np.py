"""Numpy fallback for the metric kernels.

Semantics must stay bit-comparable (double precision, same formulas) with
the Cython backend in _metrics_cy.pyx; the benchmark in benchmarks/ checks
agreement and relative speed.
"""

import numpy as np

SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def ssim_channel(a: np.ndarray, b: np.ndarray, win: int) -> float:
    """Mean local SSIM over all fully-interior win x win windows."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    n = win * win
    wa = np.lib.stride_tricks.sliding_window_view(a, (win, win))
    wb = np.lib.stride_tricks.sliding_window_view(b, (win, win))
    mu_a = wa.sum(axis=(-1, -2)) / n
    mu_b = wb.sum(axis=(-1, -2)) / n
    # population moments, matching the per-window loop in the compiled kernel
    var_a = (wa * wa).sum(axis=(-1, -2)) / n - mu_a * mu_a
    var_b = (wb * wb).sum(axis=(-1, -2)) / n - mu_b * mu_b
    cov = (wa * wb).sum(axis=(-1, -2)) / n - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2)
    return float(np.mean(num / den))


def joint_histogram(a: np.ndarray, b: np.ndarray, bins: int) -> np.ndarray:
    """Joint count histogram of two same-length [0, 1] vectors."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    ia = np.minimum((a * bins).astype(np.intp), bins - 1)
    ib = np.minimum((b * bins).astype(np.intp), bins - 1)
    flat = np.bincount(ia * bins + ib, minlength=bins * bins)
    return flat.reshape(bins, bins).astype(np.float64)


def conv2d_replicate(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """2D correlation with edge-replicated borders; kernel dims must be odd."""
    img = np.asarray(img, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    ph, pw = kh // 2, kw // 2
    padded = np.pad(img, ((ph, ph), (pw, pw)), mode="edge")
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw))
    return np.einsum("ijkl,kl->ij", windows, kernel)

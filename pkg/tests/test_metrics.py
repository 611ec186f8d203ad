import math

import numpy as np
import pytest

from obfnet._kernels import BACKEND
from obfnet.core import ImageTensor, StructuralError
from obfnet.privacy_eval.baselines import (
    DEFAULT_BLUR_KERNEL,
    DEFAULT_NOISE_FACTOR,
    DEFAULT_QUANTIZE_LEVELS,
    add_noise,
    blur,
    quantize,
)
from obfnet.privacy_eval.metrics import (
    mse_metric,
    nmi_metric,
    psnr_from_mse,
    psnr_metric,
    similarity_report,
    ssim_metric,
)

from .oracles import C1, C2, naive_blur, naive_nmi, naive_ssim


def _pair(rng, h=16, w=16):
    a = ImageTensor(rng.random((h, w, 3), dtype=np.float32))
    b = ImageTensor(rng.random((h, w, 3), dtype=np.float32))
    return a, b


# -- mse / psnr ---------------------------------------------------------------


def test_mse_identity_and_psnr_sentinel(rng):
    a, _ = _pair(rng)
    assert mse_metric(a, a) == 0.0
    assert psnr_metric(a, a) == math.inf


def test_psnr_mse_coupling(rng):
    for _ in range(20):
        a, b = _pair(rng)
        m = mse_metric(a, b)
        assert psnr_metric(a, b) == pytest.approx(-10.0 * math.log10(m), abs=1e-12)
        assert psnr_from_mse(m) == pytest.approx(-10.0 * math.log10(m), abs=1e-12)


def test_mse_shape_mismatch(rng):
    a = ImageTensor(rng.random((16, 16, 3), dtype=np.float32))
    b = ImageTensor(rng.random((16, 24, 3), dtype=np.float32))
    with pytest.raises(StructuralError):
        mse_metric(a, b)


def test_metrics_symmetric(rng):
    for _ in range(5):
        a, b = _pair(rng, 24, 24)
        assert mse_metric(a, b) == pytest.approx(mse_metric(b, a), abs=1e-12)
        assert ssim_metric(a, b) == pytest.approx(ssim_metric(b, a), abs=1e-9)
        assert nmi_metric(a, b) == pytest.approx(nmi_metric(b, a), abs=1e-12)


# -- ssim ---------------------------------------------------------------------


def test_ssim_identity(rng):
    a, _ = _pair(rng)
    assert ssim_metric(a, a) == pytest.approx(1.0, abs=1e-9)


def test_ssim_constant_images_closed_form():
    a = ImageTensor(np.zeros((16, 16, 3)))
    b = ImageTensor(np.ones((16, 16, 3)))
    # mu_a=0, mu_b=1, all variances 0: ((0+C1)(0+C2)) / ((1+C1)(0+C2))
    expected = C1 / (1.0 + C1)
    assert ssim_metric(a, b) == pytest.approx(expected, abs=1e-9)


def test_ssim_matches_naive_oracle(rng):
    for _ in range(3):
        a, b = _pair(rng, 12, 14)
        assert ssim_metric(a, b) == pytest.approx(
            naive_ssim(a.values, b.values), abs=1e-6
        )


def test_ssim_window_too_large():
    a = ImageTensor(np.zeros((8, 8, 3)))
    with pytest.raises(ValueError):
        ssim_metric(a, a, window=9)


# -- nmi ----------------------------------------------------------------------


def test_nmi_self_is_two(rng):
    a = ImageTensor(rng.random((32, 32, 3), dtype=np.float32))
    assert nmi_metric(a, a) == pytest.approx(2.0, abs=1e-9)


def test_nmi_constant_image():
    a = ImageTensor(np.full((16, 16, 3), 0.5))
    b = ImageTensor(np.full((16, 16, 3), 0.25))
    assert nmi_metric(a, b) == 1.0


def test_nmi_independent_images_near_one():
    rng = np.random.default_rng(7)
    a = ImageTensor(rng.random((512, 512, 3), dtype=np.float32))
    b = ImageTensor(rng.random((512, 512, 3), dtype=np.float32))
    assert nmi_metric(a, b) == pytest.approx(1.0, abs=0.02)


def test_nmi_matches_naive_oracle(rng):
    for _ in range(3):
        a, b = _pair(rng, 20, 20)
        assert nmi_metric(a, b) == pytest.approx(
            naive_nmi(a.values, b.values), abs=1e-9
        )


def test_nmi_bins_validation(rng):
    a, b = _pair(rng)
    with pytest.raises(ValueError):
        nmi_metric(a, b, bins=1)


# -- blur ---------------------------------------------------------------------


def test_blur_constant_unchanged():
    a = ImageTensor(np.full((16, 16, 3), 0.5))
    out = blur(a)
    assert np.allclose(out.values, 0.5, atol=1e-6)


def test_blur_impulse_mass_preserved():
    arr = np.zeros((17, 17, 3), dtype=np.float32)
    arr[8, 8, :] = 1.0
    out = blur(ImageTensor(arr), (3, 3))
    for ch in range(3):
        assert float(out.values[..., ch].sum()) == pytest.approx(1.0, abs=1e-5)


def test_blur_matches_naive_oracle(rng):
    for kernel in [(3, 3), (5, 3)]:
        a = ImageTensor(rng.random((12, 12, 3), dtype=np.float32))
        assert np.abs(
            blur(a, kernel).values - naive_blur(a.values, kernel)
        ).max() < 1e-6


def test_blur_even_kernel_rejected(rng):
    a, _ = _pair(rng)
    with pytest.raises(ValueError):
        blur(a, (4, 3))


# -- noise --------------------------------------------------------------------


def test_noise_factor_zero_identity(rng):
    a, _ = _pair(rng)
    out = add_noise(a, 0.0, seed=0)
    assert np.array_equal(out.values, a.values)


def test_noise_std_statistical():
    a = ImageTensor(np.full((600, 600, 3), 0.5))
    out = add_noise(a, 0.02, seed=0)
    std = float((out.values - 0.5).std())
    assert 0.018 <= std <= 0.022


def test_noise_seeded_deterministic(rng):
    a, _ = _pair(rng)
    assert np.array_equal(add_noise(a, 0.1, seed=3).values, add_noise(a, 0.1, seed=3).values)
    assert not np.array_equal(
        add_noise(a, 0.1, seed=3).values, add_noise(a, 0.1, seed=4).values
    )


def test_noise_negative_factor_rejected(rng):
    a, _ = _pair(rng)
    with pytest.raises(ValueError):
        add_noise(a, -0.1, seed=0)


# -- quantize -----------------------------------------------------------------


def test_quantize_examples():
    a = ImageTensor(np.full((16, 16, 3), 0.6))
    assert float(quantize(a, 2).values[0, 0, 0]) == 1.0
    b = ImageTensor(np.full((16, 16, 3), 0.5))
    assert float(quantize(b, 15).values[0, 0, 0]) == pytest.approx(0.5, abs=1e-7)


def test_quantize_level_count(rng):
    a = ImageTensor(rng.random((64, 64, 3), dtype=np.float32))
    out = quantize(a, 15)
    for ch in range(3):
        assert len(np.unique(out.values[..., ch])) <= 15


def test_quantize_levels_validation(rng):
    a, _ = _pair(rng)
    with pytest.raises(ValueError):
        quantize(a, 1)


def test_baseline_defaults():
    assert DEFAULT_BLUR_KERNEL == (3, 3)
    assert DEFAULT_NOISE_FACTOR == 0.02
    assert DEFAULT_QUANTIZE_LEVELS == 15


# -- backends -----------------------------------------------------------------


def test_backend_parity(rng):
    """Compiled and numpy kernels must agree wherever both exist."""
    from obfnet._kernels import metrics_np

    if BACKEND != "cython":
        pytest.skip("compiled backend not built; nothing to compare")
    from obfnet._kernels import _metrics_cy

    a = rng.random((20, 20), dtype=np.float64)
    b = rng.random((20, 20), dtype=np.float64)
    assert _metrics_cy.ssim_channel(a, b, 7) == pytest.approx(
        metrics_np.ssim_channel(a, b, 7), abs=1e-12
    )
    ha = np.asarray(_metrics_cy.joint_histogram(a.ravel(), b.ravel(), 32))
    hb = np.asarray(metrics_np.joint_histogram(a.ravel(), b.ravel(), 32))
    assert np.array_equal(ha, hb)
    img = rng.random((12, 12), dtype=np.float64)
    k = np.outer([0.25, 0.5, 0.25], [0.25, 0.5, 0.25])
    assert np.allclose(
        np.asarray(_metrics_cy.conv2d_replicate(img, k)),
        np.asarray(metrics_np.conv2d_replicate(img, k)),
        atol=1e-12,
    )


def test_similarity_report_fields(rng):
    a, b = _pair(rng)
    rep = similarity_report(a, b)
    d = rep.to_dict()
    assert set(d) == {"ssim", "mse", "psnr", "nmi"}
    assert d["mse"] > 0 and 1.0 <= d["nmi"] <= 2.0

"""Classical obfuscation baselines: blur, additive noise and color quantization.

Default parameters are the published comparison settings: 3x3 blur kernel,
2% noise factor, 15 color levels.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..core import ImageTensor, clamp_image

DEFAULT_BLUR_KERNEL = (3, 3)
DEFAULT_NOISE_FACTOR = 0.02
DEFAULT_QUANTIZE_LEVELS = 15


def gaussian_kernel1d(size: int) -> np.ndarray:
    """Normalized 1D Gaussian taps with sigma derived from the kernel size."""
    sigma = 0.3 * ((size - 1) * 0.5 - 1) + 0.8
    half = (size - 1) / 2.0
    x = np.arange(size, dtype=np.float64) - half
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def blur(
    image: ImageTensor,
    kernel_size: tuple[int, int] = DEFAULT_BLUR_KERNEL,
    gaussian: bool = True,
) -> ImageTensor:
    """Blur with a normalized Gaussian (or box) kernel, edge-replicated borders."""
    kh, kw = kernel_size
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError(f"kernel dimensions must be odd, got {kernel_size}")
    if gaussian:
        kernel = np.outer(gaussian_kernel1d(kh), gaussian_kernel1d(kw))
    else:
        kernel = np.full((kh, kw), 1.0 / (kh * kw))
    out = np.empty(image.values.shape, dtype=np.float64)
    for c in range(3):
        out[:, :, c] = _kernels.conv2d_replicate(
            image.values[:, :, c].astype(np.float64), kernel
        )
    return clamp_image(out)


def add_noise(
    image: ImageTensor,
    noise_factor: float = DEFAULT_NOISE_FACTOR,
    seed: int = 0,
) -> ImageTensor:
    """Add zero-mean Gaussian noise with std = noise_factor (unit range), then clamp."""
    if noise_factor < 0:
        raise ValueError("noise_factor must be >= 0")
    if noise_factor == 0:
        return image
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, noise_factor, size=image.values.shape)
    return clamp_image(image.values.astype(np.float64) + noise)


def quantize(image: ImageTensor, levels: int = DEFAULT_QUANTIZE_LEVELS) -> ImageTensor:
    """Round each channel value to the nearest of `levels` uniform grid points."""
    if levels < 2:
        raise ValueError("levels must be >= 2")
    steps = levels - 1
    vals = np.round(image.values.astype(np.float64) * steps) / steps
    return clamp_image(vals)

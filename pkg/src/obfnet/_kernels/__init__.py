"""Hot numeric kernels for the similarity metrics.

A compiled Cython implementation is preferred; a vectorized numpy fallback
with identical semantics is selected when the extension is missing or when
OBFNET_NO_EXT is set. `BACKEND` reports which one is active.

Kernel contract (shared by both backends, all float64):
  ssim_channel(a, b, win)      -> mean local SSIM of one 2D channel,
                                  uniform win x win window, valid positions
                                  only, unit dynamic range constants
  joint_histogram(a, b, bins)  -> (bins, bins) count matrix over [0, 1]^2
  conv2d_replicate(img, k)     -> 2D correlation with replicate borders
"""

import os

if os.environ.get("OBFNET_NO_EXT"):
    _impl = None
else:
    try:
        from . import _metrics_cy as _impl
    except ImportError:
        _impl = None

if _impl is not None:
    BACKEND = "cython"
    ssim_channel = _impl.ssim_channel
    joint_histogram = _impl.joint_histogram
    conv2d_replicate = _impl.conv2d_replicate
else:
    from . import metrics_np as _impl_np

    BACKEND = "numpy"
    ssim_channel = _impl_np.ssim_channel
    joint_histogram = _impl_np.joint_histogram
    conv2d_replicate = _impl_np.conv2d_replicate

__all__ = ["BACKEND", "ssim_channel", "joint_histogram", "conv2d_replicate"]

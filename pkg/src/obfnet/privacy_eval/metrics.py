"""Image similarity metrics: SSIM, MSE, PSNR and normalized mutual information.

All metrics assume unit dynamic range ([0, 1] pixels) and are symmetric in
their two arguments. PSNR is coupled to MSE through a single code path so
psnr == -10 * log10(mse) holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .. import _kernels
from ..core import ImageTensor, StructuralError

SSIM_WINDOW = 7
NMI_BINS = 100

# ITU-R BT.601 luma weights, used to collapse RGB before the NMI histogram
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)


@dataclass(frozen=True)
class SimilarityReport:
    """The four obfuscation-strength numbers for one image pair (or average)."""

    ssim: float
    mse: float
    psnr: float  # dB; +inf when mse == 0
    nmi: float

    def to_dict(self) -> dict:
        return {
            "ssim": self.ssim,
            "mse": self.mse,
            "psnr": None if math.isinf(self.psnr) else self.psnr,
            "nmi": self.nmi,
        }


def _pair(a: ImageTensor, b: ImageTensor) -> tuple[np.ndarray, np.ndarray]:
    if a.values.shape != b.values.shape:
        raise StructuralError(
            f"shape mismatch: {a.values.shape} vs {b.values.shape}"
        )
    return a.values.astype(np.float64), b.values.astype(np.float64)


def mse_metric(a: ImageTensor, b: ImageTensor) -> float:
    """Mean squared error over all pixels and channels."""
    va, vb = _pair(a, b)
    return float(np.mean((va - vb) ** 2))


def psnr_from_mse(mse: float) -> float:
    """PSNR in dB at unit dynamic range; +inf for a zero error."""
    if mse < 0.0:
        raise ValueError("mse must be non-negative")
    if mse == 0.0:
        return math.inf
    return -10.0 * math.log10(mse)


def psnr_metric(a: ImageTensor, b: ImageTensor) -> float:
    return psnr_from_mse(mse_metric(a, b))


def ssim_metric(a: ImageTensor, b: ImageTensor, window: int = SSIM_WINDOW) -> float:
    """Mean structural similarity, uniform window, computed per channel then averaged."""
    va, vb = _pair(a, b)
    if min(a.height, a.width) < window:
        raise ValueError(f"image smaller than the {window}x{window} SSIM window")
    vals = [
        _kernels.ssim_channel(va[:, :, c], vb[:, :, c], window) for c in range(3)
    ]
    return float(np.mean(vals))


def nmi_metric(a: ImageTensor, b: ImageTensor, bins: int = NMI_BINS) -> float:
    """Studholme-normalized mutual information (H(A)+H(B))/H(A,B), in [1, 2].

    Inputs are converted to grayscale luma and binned into `bins` equal-width
    intensity bins on [0, 1]; entropies are in nats.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    va, vb = _pair(a, b)
    ga = va @ LUMA_WEIGHTS
    gb = vb @ LUMA_WEIGHTS
    joint = _kernels.joint_histogram(ga, gb, bins)
    total = joint.sum()
    p_joint = joint / total
    pa = p_joint.sum(axis=1)
    pb = p_joint.sum(axis=0)
    h_a = _entropy(pa)
    h_b = _entropy(pb)
    h_ab = _entropy(p_joint.ravel())
    if h_ab == 0.0:
        # both images constant: define NMI via the independence limit
        return 1.0
    return (h_a + h_b) / h_ab


def _entropy(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def similarity_report(a: ImageTensor, b: ImageTensor) -> SimilarityReport:
    mse = mse_metric(a, b)
    return SimilarityReport(
        ssim=ssim_metric(a, b),
        mse=mse,
        psnr=psnr_from_mse(mse),
        nmi=nmi_metric(a, b),
    )


def mean_similarity(pairs) -> SimilarityReport:
    """Average the metrics over an iterable of (original, obfuscated) pairs."""
    reports = [similarity_report(a, b) for a, b in pairs]
    if not reports:
        raise ValueError("no image pairs to average")
    mean_mse = float(np.mean([r.mse for r in reports]))
    return SimilarityReport(
        ssim=float(np.mean([r.ssim for r in reports])),
        mse=mean_mse,
        psnr=psnr_from_mse(mean_mse),
        nmi=float(np.mean([r.nmi for r in reports])),
    )

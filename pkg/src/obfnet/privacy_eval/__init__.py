"""Obfuscation baselines and the privacy/utility evaluation suite."""

from .ap import APResult, UndefinedAPError, average_precision
from .baselines import add_noise, blur, quantize
from .metrics import (
    SimilarityReport,
    mse_metric,
    nmi_metric,
    psnr_metric,
    similarity_report,
    ssim_metric,
)

__all__ = [
    "APResult",
    "UndefinedAPError",
    "average_precision",
    "add_noise",
    "blur",
    "quantize",
    "SimilarityReport",
    "mse_metric",
    "nmi_metric",
    "psnr_metric",
    "similarity_report",
    "ssim_metric",
]

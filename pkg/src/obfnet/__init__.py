"""Adversarially trained video-frame obfuscation with detection-utility evaluation.

The package trains a lightweight obfuscator autoencoder against a
reconstruction adversary so that frames stay usable for person detection but
resist being reconstructed, and ships the evaluation stack around it:
person-AP scoring, image-similarity metrics, classical obfuscation baselines,
compute accounting and a reproducible experiment CLI.
"""

from ._kernels import BACKEND

__all__ = ["BACKEND", "__version__"]

try:
    from importlib.metadata import version as _version

    __version__ = _version("obfnet")
except Exception:  # pragma: no cover - metadata missing in odd environments
    __version__ = "0.0.0"

"""Side-by-side comparison of obfuscation methods: person AP vs similarity.

Each method is a frame -> frame callable (the trained obfuscator, blur,
noise, quantize, identity, ...). For every method the harness reports person
AP on the obfuscated frames plus the similarity metrics averaged over the
test split, and dumps a sample thumbnail per method.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional

from ..core import FrameManifest, ImageTensor, load_image, resolve_frame_path, save_image
from ..detector import DetectorAdapter, generate_pseudo_ground_truth
from .ap import average_precision
from .metrics import SimilarityReport, mean_similarity

ObfuscationFn = Callable[[ImageTensor], ImageTensor]


@dataclass(frozen=True)
class MethodResult:
    name: str
    person_ap: Optional[float]
    similarity: Optional[SimilarityReport]
    error: Optional[str] = None


@dataclass(frozen=True)
class ComparisonTable:
    results: tuple[MethodResult, ...]
    gt_source: str
    iou_threshold: float

    def to_text(self) -> str:
        lines = [
            f"{'method':<20} {'person AP %':>12} {'SSIM':>8} {'MSE':>8} "
            f"{'PSNR dB':>9} {'NMI':>7}",
        ]
        for r in self.results:
            if r.error is not None:
                lines.append(f"{r.name:<20} failed: {r.error}")
                continue
            s = r.similarity
            lines.append(
                f"{r.name:<20} {r.person_ap:>12.2f} {s.ssim:>8.4f} {s.mse:>8.4f} "
                f"{s.psnr:>9.4f} {s.nmi:>7.4f}"
            )
        lines.append("")
        lines.append(
            f"AP vs pseudo-GT from {self.gt_source} on clean frames, "
            f"IoU threshold {self.iou_threshold}"
        )
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "gt_source": self.gt_source,
            "iou_threshold": self.iou_threshold,
            "methods": [
                {
                    "name": r.name,
                    "person_ap": r.person_ap,
                    "similarity": r.similarity.to_dict() if r.similarity else None,
                    "error": r.error,
                }
                for r in self.results
            ],
        }


def table3_harness(
    methods: Mapping[str, ObfuscationFn],
    manifest: FrameManifest,
    base_dir,
    adapter: DetectorAdapter,
    gt_score_threshold: float = 0.5,
    det_score_threshold: float = 0.05,
    iou_threshold: float = 0.5,
    thumbnail_dir=None,
    ground_truth=None,
) -> ComparisonTable:
    """Evaluate every obfuscation method on the manifest's test split.

    `ground_truth` may supply {frame_id: [BoundingBox]} directly (synthetic
    exact labels); otherwise pseudo-GT is generated from `adapter` on the
    clean frames. Per-method failures are recorded and the run continues.
    """
    test = manifest.subset(split="test")
    if len(test) == 0:
        test = manifest
    clean = {r.frame_id: load_image(resolve_frame_path(r, base_dir)) for r in test}

    if ground_truth is None:
        labeled = generate_pseudo_ground_truth(adapter, test, base_dir, gt_score_threshold)
        ground_truth = {
            r.frame_id: r.labels.person_boxes(adapter.person_class_id) for r in labeled
        }

    results = []
    for name, fn in methods.items():
        try:
            obf = {fid: fn(img) for fid, img in clean.items()}
            dets = {
                fid: [
                    d
                    for d in adapter.detect(img, det_score_threshold)
                    if d.class_id == adapter.person_class_id
                ]
                for fid, img in obf.items()
            }
            ap = average_precision(dets, ground_truth, iou_threshold)
            sim = mean_similarity((clean[fid], obf[fid]) for fid in clean)
            if thumbnail_dir is not None:
                Path(thumbnail_dir).mkdir(parents=True, exist_ok=True)
                sample_id = next(iter(clean))
                save_image(obf[sample_id], Path(thumbnail_dir) / f"{name}.png")
            results.append(MethodResult(name, ap.person_ap, sim))
        except Exception as exc:
            results.append(
                MethodResult(name, None, None, error=f"{type(exc).__name__}: {exc}")
            )
    return ComparisonTable(
        results=tuple(results),
        gt_source=adapter.detector_id,
        iou_threshold=iou_threshold,
    )

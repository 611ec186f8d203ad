"""Shared data model: frames, boxes, label sets and manifests.

Everything here is an immutable value type plus pure functions, safe for
concurrent use. Pixel values are floats in [0, 1]; box coordinates use the
image frame with the origin at the top-left corner, x growing right and y
growing down.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np
from PIL import Image as PILImage

PERSON_CLASS_ID = 1

MIN_SIDE = 8  # smallest frame the autoencoder downsampling stack accepts


class StructuralError(ValueError):
    """An array or record does not have the required structure."""


class ManifestError(ValueError):
    """A frame manifest is malformed or references missing files."""


@dataclass(frozen=True)
class ImageTensor:
    """A normalized H x W x 3 frame with float values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise StructuralError(f"expected (H, W, 3) array, got shape {arr.shape}")
        if arr.shape[0] < MIN_SIDE or arr.shape[1] < MIN_SIDE:
            raise StructuralError(
                f"frame must be at least {MIN_SIDE}x{MIN_SIDE}, got {arr.shape[:2]}"
            )
        if not np.isfinite(arr).all():
            raise StructuralError("frame contains non-finite values")
        if arr.min() < 0.0 or arr.max() > 1.0:
            raise StructuralError("pixel values must lie in [0, 1]; use clamp_image")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    @property
    def resolution(self) -> tuple[int, int]:
        """(height, width) pair."""
        return self.values.shape[0], self.values.shape[1]


def clamp_image(values: np.ndarray) -> ImageTensor:
    """Clip an arbitrary 3-channel float array into a valid ImageTensor."""
    arr = np.asarray(values, dtype=np.float32)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise StructuralError(f"expected (H, W, 3) array, got shape {arr.shape}")
    return ImageTensor(np.clip(arr, 0.0, 1.0))


def load_image(path: str | Path) -> ImageTensor:
    """Read an 8-bit PNG (or other lossless image) and normalize to [0, 1]."""
    with PILImage.open(path) as im:
        rgb = im.convert("RGB")
        arr = np.asarray(rgb, dtype=np.float32) / 255.0
    return ImageTensor(arr)


def save_image(image: ImageTensor, path: str | Path) -> None:
    """Write a frame as an 8-bit-per-channel PNG."""
    arr = np.round(image.values * 255.0).astype(np.uint8)
    PILImage.fromarray(arr, mode="RGB").save(path, format="PNG")


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box as corner pairs in pixel coordinates."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise StructuralError(
                f"degenerate box ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )

    @property
    def area(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def clipped(self, height: int, width: int) -> Optional["BoundingBox"]:
        """Intersect with the image bounds; None if nothing remains."""
        x0 = max(self.x_min, 0.0)
        y0 = max(self.y_min, 0.0)
        x1 = min(self.x_max, float(width))
        y1 = min(self.y_max, float(height))
        if x0 >= x1 or y0 >= y1:
            return None
        return BoundingBox(x0, y0, x1, y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection-over-union of two boxes, in [0, 1]."""
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0.0 or iy <= 0.0:
        return 0.0
    inter = ix * iy
    return inter / (a.area + b.area - inter)


@dataclass(frozen=True)
class Detection:
    """A detector output: box, category and confidence."""

    box: BoundingBox
    class_id: int
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise StructuralError(f"score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class LabeledBox:
    """A ground-truth (or pseudo-ground-truth) box with its category."""

    box: BoundingBox
    class_id: int
    score: Optional[float] = None


@dataclass(frozen=True)
class Provenance:
    """Where a label set came from: exact synthetic GT or detector pseudo-GT."""

    kind: str  # "synthetic-exact" | "pseudo"
    detector_id: Optional[str] = None
    score_threshold: Optional[float] = None

    def __post_init__(self):
        if self.kind not in ("synthetic-exact", "pseudo"):
            raise StructuralError(f"unknown provenance kind {self.kind!r}")
        if self.kind == "pseudo" and (
            self.detector_id is None or self.score_threshold is None
        ):
            raise StructuralError("pseudo provenance requires detector_id and threshold")

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "pseudo":
            d["detector_id"] = self.detector_id
            d["score_threshold"] = self.score_threshold
        return d

    @staticmethod
    def from_dict(d: dict) -> "Provenance":
        return Provenance(
            kind=d["kind"],
            detector_id=d.get("detector_id"),
            score_threshold=d.get("score_threshold"),
        )


SYNTHETIC_EXACT = Provenance("synthetic-exact")


@dataclass(frozen=True)
class LabelSet:
    """All labeled boxes for one frame, with recorded provenance."""

    frame_id: str
    boxes: tuple[LabeledBox, ...]
    provenance: Provenance

    def person_boxes(self, person_class_id: int = PERSON_CLASS_ID) -> list[BoundingBox]:
        return [lb.box for lb in self.boxes if lb.class_id == person_class_id]

    def to_dict(self) -> dict:
        return {
            "provenance": self.provenance.to_dict(),
            "boxes": [
                {
                    "box": list(lb.box.as_tuple()),
                    "class": lb.class_id,
                    **({"score": lb.score} if lb.score is not None else {}),
                }
                for lb in self.boxes
            ],
        }

    @staticmethod
    def from_dict(frame_id: str, d: dict) -> "LabelSet":
        boxes = tuple(
            LabeledBox(
                box=BoundingBox(*entry["box"]),
                class_id=int(entry["class"]),
                score=entry.get("score"),
            )
            for entry in d["boxes"]
        )
        return LabelSet(frame_id, boxes, Provenance.from_dict(d["provenance"]))


@dataclass(frozen=True)
class FrameRecord:
    """One manifest row: frame identity, storage location and optional labels."""

    frame_id: str
    path: str
    split: str
    camera: str
    labels: Optional[LabelSet] = None


@dataclass(frozen=True)
class FrameManifest:
    """An ordered, unique-id collection of frame records."""

    records: tuple[FrameRecord, ...]

    def __post_init__(self):
        ids = [r.frame_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ManifestError("duplicate frame_ids in manifest")

    def __iter__(self) -> Iterator[FrameRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)

    def frame_ids(self) -> list[str]:
        return [r.frame_id for r in self.records]

    def subset(self, split: Optional[str] = None, camera: Optional[str] = None) -> "FrameManifest":
        recs = [
            r
            for r in self.records
            if (split is None or r.split == split)
            and (camera is None or r.camera == camera)
        ]
        return FrameManifest(tuple(recs))

    def with_labels(self, labels: dict[str, LabelSet]) -> "FrameManifest":
        """Return a manifest with the given label sets attached per frame_id."""
        recs = []
        for r in self.records:
            lab = labels.get(r.frame_id, r.labels)
            recs.append(FrameRecord(r.frame_id, r.path, r.split, r.camera, lab))
        return FrameManifest(tuple(recs))

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                row = {
                    "frame_id": r.frame_id,
                    "path": r.path,
                    "split": r.split,
                    "camera": r.camera,
                }
                if r.labels is not None:
                    row["labels"] = r.labels.to_dict()
                fh.write(json.dumps(row, sort_keys=True) + "\n")

    @staticmethod
    def load(path: str | Path, check_files: bool = True) -> "FrameManifest":
        base = Path(path).parent
        records = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ManifestError(f"{path}:{lineno}: invalid record") from exc
                labels = None
                if "labels" in row:
                    labels = LabelSet.from_dict(row["frame_id"], row["labels"])
                rec = FrameRecord(
                    frame_id=row["frame_id"],
                    path=row["path"],
                    split=row["split"],
                    camera=row["camera"],
                    labels=labels,
                )
                if check_files and not resolve_frame_path(rec, base).exists():
                    raise ManifestError(
                        f"{path}:{lineno}: frame file {rec.path} does not exist"
                    )
                records.append(rec)
        return FrameManifest(tuple(records))


def resolve_frame_path(record: FrameRecord, base: str | Path) -> Path:
    """Frame paths are stored relative to the manifest's directory."""
    p = Path(record.path)
    return p if p.is_absolute() else Path(base) / p


def load_frames(manifest: FrameManifest, base: str | Path) -> list[ImageTensor]:
    return [load_image(resolve_frame_path(r, base)) for r in manifest]

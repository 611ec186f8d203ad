"""Synthetic surveillance-style frames with exact person ground truth.

Figures are abstract silhouettes (head ellipse on a body rectangle) on a
textured gradient background with distractor shapes; realism is irrelevant,
the point is a learnable person category with tight boxes. Every frame is
rendered from an rng derived from (scene seed, frame index), so generation
is deterministic regardless of ordering or parallelism.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import (
    PERSON_CLASS_ID,
    SYNTHETIC_EXACT,
    BoundingBox,
    FrameManifest,
    FrameRecord,
    ImageTensor,
    LabelSet,
    LabeledBox,
    clamp_image,
    iou,
    save_image,
)


class GenerationError(RuntimeError):
    """Figure placement failed after bounded retries."""


@dataclass(frozen=True)
class SceneSpec:
    height: int = 200
    width: int = 320
    min_figures: int = 1
    max_figures: int = 3
    seed: int = 0
    camera: str = "cam-a"
    background_base: float = 0.55
    illumination: float = 1.0
    figure_scale_range: tuple[float, float] = (12.0, 22.0)  # body width, px
    n_distractors: int = 3

    def __post_init__(self):
        if self.min_figures < 0 or self.max_figures < self.min_figures:
            raise ValueError("invalid figure count range")


def _background(scene: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = scene.height, scene.width
    yy = np.linspace(-0.08, 0.08, h)[:, None]
    xx = np.linspace(-0.05, 0.05, w)[None, :]
    base = scene.background_base + yy + xx
    img = np.repeat(base[:, :, None], 3, axis=2)
    tint = rng.uniform(-0.03, 0.03, size=3)
    img = img + tint[None, None, :]
    img += rng.normal(0.0, 0.02, size=img.shape)
    return img


def _add_distractors(img: np.ndarray, rng: np.random.Generator, n: int) -> None:
    h, w = img.shape[:2]
    for _ in range(n):
        color = rng.uniform(0.6, 0.95, size=3)
        if rng.random() < 0.5:
            # flat bright bar
            bw = int(rng.uniform(0.15, 0.4) * w)
            bh = int(rng.uniform(2, 6))
            x0 = rng.integers(0, max(1, w - bw))
            y0 = rng.integers(0, max(1, h - bh))
            img[y0 : y0 + bh, x0 : x0 + bw] = color
        else:
            # bright disc
            r = rng.uniform(4, 10)
            cx = rng.uniform(r, w - r)
            cy = rng.uniform(r, h - r)
            yy, xx = np.ogrid[:h, :w]
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= r * r
            img[mask] = color


def _sample_figure(
    rng: np.random.Generator, scene: SceneSpec
) -> tuple[BoundingBox, np.ndarray]:
    """Sample geometry + color for one figure, fully inside the frame."""
    lo, hi = scene.figure_scale_range
    s = rng.uniform(lo, hi)  # body width
    head_ry = 0.55 * s
    total_h = 2.0 * head_ry + 2.2 * s
    margin = 2.0
    cx = rng.uniform(margin + s / 2, scene.width - margin - s / 2)
    y_top = rng.uniform(margin, scene.height - margin - total_h)
    color = rng.uniform(0.02, 0.3, size=3)
    box = BoundingBox(cx - s / 2, y_top, cx + s / 2, y_top + total_h)
    return box, color


def _render_figure(img: np.ndarray, box: BoundingBox, color: np.ndarray) -> None:
    h, w = img.shape[:2]
    s = box.x_max - box.x_min
    head_rx, head_ry = 0.45 * s, 0.55 * s
    cx = (box.x_min + box.x_max) / 2
    y_top = box.y_min
    yy, xx = np.ogrid[:h, :w]
    head_cy = y_top + head_ry
    head = ((xx - cx) / head_rx) ** 2 + ((yy - head_cy) / head_ry) ** 2 <= 1.0
    body_top = y_top + 1.8 * head_ry  # slight neck overlap
    body = (
        (xx >= cx - s / 2)
        & (xx <= cx + s / 2)
        & (yy >= body_top)
        & (yy <= box.y_max)
    )
    img[head | body] = color


def render_frame(scene: SceneSpec, frame_index: int) -> tuple[ImageTensor, list[BoundingBox]]:
    """Deterministically render one frame and its exact person boxes."""
    rng = np.random.default_rng([scene.seed, frame_index])
    img = _background(scene, rng)
    _add_distractors(img, rng, scene.n_distractors)
    n_fig = int(rng.integers(scene.min_figures, scene.max_figures + 1))
    boxes: list[BoundingBox] = []
    for _ in range(n_fig):
        for _attempt in range(50):
            box, color = _sample_figure(rng, scene)
            if all(iou(box, b) <= 0.15 for b in boxes):
                _render_figure(img, box, color)
                boxes.append(box)
                break
        else:
            raise GenerationError(
                f"could not place figure {len(boxes)} in frame {frame_index}"
            )
    img *= scene.illumination
    return clamp_image(img), boxes


def generate_dataset(
    scene: SceneSpec,
    n_frames: int,
    split_ratio: float,
    out_dir: str | Path,
) -> FrameManifest:
    """Render n_frames PNGs + manifest under out_dir; deterministic per seed."""
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    n_train = round(n_frames * split_ratio)
    records = []
    for i in range(n_frames):
        frame_id = f"{scene.camera}-{i:05d}"
        image, boxes = render_frame(scene, i)
        rel_path = f"frames/{frame_id}.png"
        save_image(image, out_dir / rel_path)
        labels = LabelSet(
            frame_id,
            tuple(LabeledBox(b, PERSON_CLASS_ID) for b in boxes),
            SYNTHETIC_EXACT,
        )
        split = "train" if i < n_train else "test"
        records.append(FrameRecord(frame_id, rel_path, split, scene.camera, labels))
    manifest = FrameManifest(tuple(records))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest


def two_camera_variant(
    scene: SceneSpec,
    n_frames: int,
    out_dir: str | Path,
    split_ratio: float = 0.8,
) -> tuple[FrameManifest, FrameManifest]:
    """Camera A as given plus a camera B with shifted background, illumination
    and figure-scale distribution; same label format, distinct camera tags."""
    out_dir = Path(out_dir)
    cam_a = scene
    lo, hi = scene.figure_scale_range
    cam_b = replace(
        scene,
        camera=scene.camera + "-b" if not scene.camera.endswith("-a") else scene.camera[:-2] + "-b",
        seed=scene.seed + 1,
        background_base=scene.background_base + 0.2,
        illumination=scene.illumination * 0.85,
        figure_scale_range=(lo * 1.2, hi * 1.2),
    )
    man_a = generate_dataset(cam_a, n_frames, split_ratio, out_dir / "cam_a")
    man_b = generate_dataset(cam_b, n_frames, split_ratio, out_dir / "cam_b")
    return man_a, man_b

"""Run-directory plumbing and dataset ingestion for the CLI.

Every command writes into a run directory containing the resolved config,
its hash, the seed and a version string, so any table or plot can be
regenerated from artifacts alone.
"""

from __future__ import annotations

import json
import subprocess
import time
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image as PILImage

from .config import ExperimentConfig
from .core import FrameManifest, FrameRecord, ImageTensor, ManifestError, save_image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


class IngestionError(RuntimeError):
    """An input file could not be read; the message names it."""


class DependencyError(RuntimeError):
    """A required upstream artifact is missing; the message names it."""


def package_version() -> str:
    """git-describe when available, else the installed package version."""
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=5,
            cwd=Path(__file__).parent,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        from importlib.metadata import version

        return version("obfnet")
    except Exception:
        return "unknown"


def create_run_dir(
    config: ExperimentConfig, command: str, run_dir: Optional[str] = None
) -> Path:
    if run_dir is None:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run_dir = Path(config.output_dir) / f"{command}-{stamp}"
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_dir / "config.resolved.yaml")
    meta = {
        "command": command,
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "version": package_version(),
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    (run_dir / "meta.json").write_text(json.dumps(meta, indent=2) + "\n")
    return run_dir


def write_artifact(path: Path, payload: dict, config_hash: str) -> None:
    """JSON artifact with the producing config hash embedded."""
    payload = dict(payload)
    payload["config_hash"] = config_hash
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def read_artifact(path: Path) -> dict:
    if not Path(path).exists():
        raise DependencyError(f"missing upstream artifact: {path}")
    return json.loads(Path(path).read_text())


def _resize(img: PILImage.Image, width: int, height: int) -> np.ndarray:
    # aspect-ignoring resize to the fixed experiment resolution
    resized = img.convert("RGB").resize((width, height), PILImage.BILINEAR)
    return np.asarray(resized, dtype=np.float32) / 255.0


def ingest_video(
    input_path,
    out_dir,
    target_resolution: tuple[int, int] = (200, 320),  # (height, width)
    stride: int = 1,
    split: str = "test",
    camera: str = "ingested",
) -> FrameManifest:
    """Extract frames from a video file or image directory into PNG + manifest."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    height, width = target_resolution
    input_path = Path(input_path)
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)

    arrays: list[np.ndarray] = []
    if input_path.is_dir():
        files = sorted(
            p for p in input_path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        )
        if not files:
            raise IngestionError(f"no image files found in {input_path}")
        for i, p in enumerate(files):
            if i % stride:
                continue
            try:
                with PILImage.open(p) as im:
                    arrays.append(_resize(im, width, height))
            except OSError as exc:
                raise IngestionError(f"unreadable input file: {p}") from exc
    elif input_path.is_file():
        import cv2

        cap = cv2.VideoCapture(str(input_path))
        if not cap.isOpened():
            raise IngestionError(f"unreadable video file: {input_path}")
        index = 0
        while True:
            ok, frame = cap.read()
            if not ok:
                break
            if index % stride == 0:
                rgb = cv2.cvtColor(frame, cv2.COLOR_BGR2RGB)
                arrays.append(_resize(PILImage.fromarray(rgb), width, height))
            index += 1
        cap.release()
        if not arrays:
            raise IngestionError(f"no frames decoded from {input_path}")
    else:
        raise IngestionError(f"input does not exist: {input_path}")

    records = []
    for i, arr in enumerate(arrays):
        frame_id = f"{camera}-{i:05d}"
        rel = f"frames/{frame_id}.png"
        save_image(ImageTensor(np.clip(arr, 0.0, 1.0)), out_dir / rel)
        records.append(FrameRecord(frame_id, rel, split, camera))
    manifest = FrameManifest(tuple(records))
    manifest.save(out_dir / "manifest.jsonl")
    return manifest

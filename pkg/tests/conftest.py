"""Shared fixtures: synthetic datasets and trained models built once per session.

The expensive fixtures (60-epoch toy detector, 10-epoch adversarial run) are
session-scoped and shared between the acceptance criteria and a handful of
unit tests; everything else builds its own tiny inputs.
"""

from __future__ import annotations

import numpy as np
import pytest

from obfnet.core import FrameManifest, FrameRecord, load_image, resolve_frame_path
from obfnet.detector import ToyConvDetector, train_toy_detector
from obfnet.models import (
    ROLE_DEOBFUSCATOR,
    ROLE_OBFUSCATOR,
    AutoencoderSpec,
    build_autoencoder,
)
from obfnet.privacy_eval.ap import average_precision
from obfnet.synth import SceneSpec, two_camera_variant
from obfnet.training import TrainSchedule, train_adversarial

SCENE = SceneSpec(
    height=64,
    width=96,
    min_figures=1,
    max_figures=2,
    seed=0,
    figure_scale_range=(8.0, 14.0),
)
N_FRAMES = 160
TOY_ANCHOR = (11.0, 36.0)
AE_SPEC = AutoencoderSpec(input_height=64, input_width=96)
ADV_SCHEDULE = TrainSchedule(total_epochs=10, milestone_period=5, batch_size=16)


def absolutize(manifest: FrameManifest, base) -> FrameManifest:
    return FrameManifest(
        tuple(
            FrameRecord(
                r.frame_id,
                str(resolve_frame_path(r, base).resolve()),
                r.split,
                r.camera,
                r.labels,
            )
            for r in manifest
        )
    )


def evaluate_ap(adapter, manifest, base, transform=None, iou=0.5, score=0.05):
    """Person AP of `adapter` on (optionally transformed) frames vs labels."""
    gt = {r.frame_id: r.labels.person_boxes(adapter.person_class_id) for r in manifest}
    dets = {}
    for r in manifest:
        img = load_image(resolve_frame_path(r, base))
        if transform is not None:
            img = transform(img)
        dets[r.frame_id] = [
            d for d in adapter.detect(img, score) if d.class_id == adapter.person_class_id
        ]
    return average_precision(dets, gt, iou).person_ap


@pytest.fixture(scope="session")
def dataset(tmp_path_factory):
    """Two synthetic cameras, 160 frames each, 80/20 split."""
    out = tmp_path_factory.mktemp("dataset")
    man_a, man_b = two_camera_variant(SCENE, N_FRAMES, out)
    base_a, base_b = out / "cam_a", out / "cam_b"
    combined = FrameManifest(
        tuple(list(absolutize(man_a, base_a)) + list(absolutize(man_b, base_b)))
    )
    return {
        "man_a": man_a,
        "man_b": man_b,
        "base_a": base_a,
        "base_b": base_b,
        "combined": combined,
    }


@pytest.fixture(scope="session")
def toy_adapter(dataset):
    """Toy detector trained to convergence on both cameras' clean frames."""
    return train_toy_detector(
        dataset["combined"],
        "/",
        epochs=60,
        seed=0,
        adapter=ToyConvDetector(seed=0, anchor=TOY_ANCHOR),
    )


@pytest.fixture(scope="session")
def adv_run(dataset, toy_adapter):
    """10-epoch adversarial run on camera A; returns (obf, deobf, history)."""
    obf = build_autoencoder(AE_SPEC, ROLE_OBFUSCATOR, seed=0)
    deobf = build_autoencoder(AE_SPEC, ROLE_DEOBFUSCATOR, seed=1)
    return train_adversarial(
        obf,
        deobf,
        toy_adapter,
        dataset["man_a"],
        dataset["base_a"],
        ADV_SCHEDULE,
        seed=0,
    )


@pytest.fixture(scope="session")
def small_manifest(dataset):
    """32 labeled train frames of camera A with absolute paths, for fast runs."""
    records = [
        r for r in absolutize(dataset["man_a"], dataset["base_a"]) if r.split == "train"
    ]
    return FrameManifest(tuple(records[:32]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)

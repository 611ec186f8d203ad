import numpy as np
import pytest

from obfnet.core import FrameManifest, iou, load_image, resolve_frame_path
from obfnet.synth import GenerationError, SceneSpec, generate_dataset, render_frame, two_camera_variant

SCENE = SceneSpec(
    height=64,
    width=96,
    min_figures=1,
    max_figures=3,
    seed=7,
    figure_scale_range=(8.0, 14.0),
)


def test_render_deterministic():
    img1, boxes1 = render_frame(SCENE, 5)
    img2, boxes2 = render_frame(SCENE, 5)
    assert np.array_equal(img1.values, img2.values)
    assert boxes1 == boxes2
    img3, _ = render_frame(SCENE, 6)
    assert not np.array_equal(img1.values, img3.values)


def test_boxes_within_bounds_and_count():
    for i in range(20):
        img, boxes = render_frame(SCENE, i)
        assert SCENE.min_figures <= len(boxes) <= SCENE.max_figures
        for b in boxes:
            assert 0 <= b.x_min < b.x_max <= SCENE.width
            assert 0 <= b.y_min < b.y_max <= SCENE.height


def test_figures_do_not_overlap_much():
    for i in range(20):
        _, boxes = render_frame(SCENE, i)
        for j in range(len(boxes)):
            for k in range(j + 1, len(boxes)):
                assert iou(boxes[j], boxes[k]) <= 0.15


def test_figures_contrast_with_background():
    """The person blob must actually be visible inside its own box."""
    img, boxes = render_frame(SCENE, 0)
    arr = img.values
    bg = float(np.median(arr))
    for b in boxes:
        patch = arr[int(b.y_min) : int(b.y_max), int(b.x_min) : int(b.x_max)]
        assert abs(float(patch.mean()) - bg) > 0.05


def test_generate_dataset(tmp_path):
    man = generate_dataset(SCENE, 10, 0.8, tmp_path)
    assert len(man) == 10
    assert len(man.subset(split="train")) == 8
    assert len(man.subset(split="test")) == 2
    loaded = FrameManifest.load(tmp_path / "manifest.jsonl")
    assert loaded.frame_ids() == man.frame_ids()
    for r in loaded:
        assert r.labels is not None
        assert r.labels.provenance.kind == "synthetic-exact"
        img = load_image(resolve_frame_path(r, tmp_path))
        assert img.resolution == (64, 96)


def test_generate_dataset_rejects_empty(tmp_path):
    with pytest.raises(ValueError):
        generate_dataset(SCENE, 0, 0.8, tmp_path)


def test_two_camera_variant(tmp_path):
    man_a, man_b = two_camera_variant(SCENE, 8, tmp_path)
    cams_a = {r.camera for r in man_a}
    cams_b = {r.camera for r in man_b}
    assert cams_a.isdisjoint(cams_b)
    assert set(man_a.frame_ids()).isdisjoint(man_b.frame_ids())
    # camera B has a visibly different background brightness
    img_a = load_image(resolve_frame_path(next(iter(man_a)), tmp_path / "cam_a"))
    img_b = load_image(resolve_frame_path(next(iter(man_b)), tmp_path / "cam_b"))
    assert abs(float(img_a.values.mean()) - float(img_b.values.mean())) > 0.02


def test_scene_validation():
    with pytest.raises(ValueError):
        SceneSpec(height=64, width=96, min_figures=3, max_figures=1)

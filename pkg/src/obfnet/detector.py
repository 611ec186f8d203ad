"""Detector adapters: pretrained backends for evaluation/pseudo-labels and a
tiny trainable single-stage detector for desk-scale runs.

Adapters expose two capabilities: `detect` (eval-mode, pure) and `loss`
(a differentiable detection loss whose gradients flow to the input image
while the detector's own parameters stay frozen).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
from torch import nn

from .core import (
    PERSON_CLASS_ID,
    BoundingBox,
    Detection,
    FrameManifest,
    ImageTensor,
    LabelSet,
    LabeledBox,
    Provenance,
    iou,
    load_image,
    resolve_frame_path,
)
from .models import ModelHandle, images_to_tensor

TOY_STRIDE = 8
TOY_ANCHOR = (16.0, 48.0)  # (width, height) prior for the single anchor


class DetectorUnavailableError(RuntimeError):
    """The requested detector backend cannot be constructed (e.g. no weights)."""


class NumericalLossError(RuntimeError):
    """The detection loss came out non-finite."""


def parameter_checksum(module: nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class DetectorAdapter:
    """Base adapter; concrete backends fill in the torch-level hooks."""

    detector_id: str
    person_class_id: int
    capabilities: frozenset

    def detect(
        self, image: ImageTensor, score_threshold: float
    ) -> list[Detection]:
        if "detect" not in self.capabilities:
            raise DetectorUnavailableError(
                f"{self.detector_id} has no detect capability"
            )
        if not 0.0 <= score_threshold <= 1.0:
            raise ValueError("score_threshold must be in [0, 1]")
        dets = self._detect_impl(image, score_threshold)
        clipped = []
        for d in dets:
            box = d.box.clipped(image.height, image.width)
            if box is not None:
                clipped.append(Detection(box, d.class_id, d.score))
        clipped.sort(key=lambda d: -d.score)
        return clipped

    def detection_loss_tensor(
        self, images: torch.Tensor, labels: Sequence[LabelSet]
    ) -> torch.Tensor:
        """Scalar loss with a gradient path to `images`; parameters frozen."""
        if "loss" not in self.capabilities:
            raise DetectorUnavailableError(
                f"{self.detector_id} has no loss capability"
            )
        return self._loss_impl(images, labels)

    def _detect_impl(self, image, score_threshold):
        raise NotImplementedError

    def _loss_impl(self, images, labels):
        raise NotImplementedError


def detection_loss(
    adapter: DetectorAdapter, image: ImageTensor, labels: LabelSet
) -> float:
    """Public single-image detection loss (no graph kept)."""
    x = images_to_tensor([image])
    loss = adapter.detection_loss_tensor(x, [labels])
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NumericalLossError(
            f"non-finite detection loss on frame {labels.frame_id}"
        )
    return value


class _ToyNet(nn.Module):
    """3-level conv backbone + 1x1 head: per-cell (objectness, tx, ty, tw, th)."""

    def __init__(self):
        super().__init__()
        layers = []
        c_in = 3
        # three stride-2 levels, then stride-1 layers to push the receptive
        # field past the tallest figure (~50 px)
        for c_out, stride in ((16, 2), (32, 2), (64, 2), (64, 1), (64, 1)):
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ]
            c_in = c_out
        self.backbone = nn.Sequential(*layers)
        self.head = nn.Conv2d(64, 5, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.backbone(x))


class ToyConvDetector(DetectorAdapter):
    """Single-anchor, person-only detector trainable at desk scale."""

    def __init__(self, seed: int = 0, anchor: tuple[float, float] = TOY_ANCHOR):
        self.detector_id = "toy-conv"
        self.person_class_id = PERSON_CLASS_ID
        self.capabilities = frozenset({"detect", "loss"})
        self.anchor = anchor
        torch.manual_seed(seed)
        self.module = _ToyNet()
        self.module.eval()

    # -- detection -------------------------------------------------------

    def _detect_impl(self, image: ImageTensor, score_threshold: float):
        x = images_to_tensor([image])
        was_training = self.module.training
        self.module.eval()
        try:
            with torch.no_grad():
                out = self.module(x)[0]  # 5, gh, gw
        finally:
            self.module.train(was_training)
        probs = torch.sigmoid(out[0])
        keep = (probs >= score_threshold).nonzero(as_tuple=False)
        aw, ah = self.anchor
        dets = []
        for i, j in keep.tolist():
            p = float(probs[i, j])
            cx = (j + 0.5 + float(out[1, i, j])) * TOY_STRIDE
            cy = (i + 0.5 + float(out[2, i, j])) * TOY_STRIDE
            w = aw * math.exp(max(-4.0, min(4.0, float(out[3, i, j]))))
            h = ah * math.exp(max(-4.0, min(4.0, float(out[4, i, j]))))
            try:
                box = BoundingBox(cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2)
            except ValueError:
                continue
            dets.append(Detection(box, self.person_class_id, p))
        return _nms(dets, iou_threshold=0.5)

    # -- loss --------------------------------------------------------------

    def _loss_impl(self, images: torch.Tensor, labels: Sequence[LabelSet]):
        was_training = self.module.training
        self.module.eval()  # frozen statistics; still differentiable
        try:
            out = self.module(images)
        finally:
            self.module.train(was_training)
        return _toy_loss(out, labels, self.anchor, self.person_class_id)


def _toy_loss(
    out: torch.Tensor,
    labels: Sequence[LabelSet],
    anchor: tuple[float, float],
    person_class_id: int,
) -> torch.Tensor:
    """Objectness BCE + smooth-L1 box regression on grid-cell targets.

    Every cell whose center falls inside a ground-truth box is positive and
    regresses toward that full box (offsets relative to the cell center,
    width/height in anchor-log space), so duplicate firings along a tall
    figure decode to near-identical boxes and collapse under NMS.
    """
    n, _, gh, gw = out.shape
    obj_target = torch.zeros((n, gh, gw), dtype=out.dtype)
    box_target = torch.zeros((n, 4, gh, gw), dtype=out.dtype)
    box_mask = torch.zeros((n, gh, gw), dtype=torch.bool)
    aw, ah = anchor
    for b, labelset in enumerate(labels):
        for lb in labelset.boxes:
            if lb.class_id != person_class_id:
                continue
            box = lb.box
            cx = (box.x_min + box.x_max) / 2
            cy = (box.y_min + box.y_max) / 2
            tw = math.log((box.x_max - box.x_min) / aw)
            th = math.log((box.y_max - box.y_min) / ah)
            j_lo = max(0, int(box.x_min // TOY_STRIDE))
            j_hi = min(gw - 1, int(box.x_max // TOY_STRIDE))
            i_lo = max(0, int(box.y_min // TOY_STRIDE))
            i_hi = min(gh - 1, int(box.y_max // TOY_STRIDE))
            for i in range(i_lo, i_hi + 1):
                for j in range(j_lo, j_hi + 1):
                    cell_x = (j + 0.5) * TOY_STRIDE
                    cell_y = (i + 0.5) * TOY_STRIDE
                    inside = box.x_min <= cell_x <= box.x_max and (
                        box.y_min <= cell_y <= box.y_max
                    )
                    center_cell = i == min(
                        gh - 1, max(0, int(cy // TOY_STRIDE))
                    ) and j == min(gw - 1, max(0, int(cx // TOY_STRIDE)))
                    if not (inside or center_cell):
                        continue
                    obj_target[b, i, j] = 1.0
                    box_mask[b, i, j] = True
                    box_target[b, 0, i, j] = cx / TOY_STRIDE - (j + 0.5)
                    box_target[b, 1, i, j] = cy / TOY_STRIDE - (i + 0.5)
                    box_target[b, 2, i, j] = tw
                    box_target[b, 3, i, j] = th
    obj_loss = nn.functional.binary_cross_entropy_with_logits(
        out[:, 0], obj_target, pos_weight=out.new_tensor(4.0)
    )
    if box_mask.any():
        pred = out[:, 1:5].permute(0, 2, 3, 1)[box_mask]
        tgt = box_target.permute(0, 2, 3, 1)[box_mask]
        box_loss = nn.functional.smooth_l1_loss(pred, tgt)
    else:
        box_loss = out.sum() * 0.0
    return obj_loss + 5.0 * box_loss


def _nms(dets: list[Detection], iou_threshold: float) -> list[Detection]:
    dets = sorted(dets, key=lambda d: -d.score)
    kept: list[Detection] = []
    for d in dets:
        if all(iou(d.box, k.box) < iou_threshold for k in kept):
            kept.append(d)
    return kept


def train_toy_detector(
    manifest: FrameManifest,
    base_dir,
    epochs: int = 40,
    lr: float = 1e-3,
    batch_size: int = 8,
    seed: int = 0,
    adapter: Optional[ToyConvDetector] = None,
) -> ToyConvDetector:
    """Fit the toy detector on labeled frames (train split) by plain AdamW."""
    if adapter is None:
        adapter = ToyConvDetector(seed=seed)
    records = [r for r in manifest.subset(split="train") if r.labels is not None]
    if not records:
        raise ValueError("manifest has no labeled train frames")
    images = [load_image(resolve_frame_path(r, base_dir)) for r in records]
    tensors = images_to_tensor(images)
    labels = [r.labels for r in records]
    opt = torch.optim.AdamW(adapter.module.parameters(), lr=lr, weight_decay=1e-4)
    adapter.module.train()
    for epoch in range(epochs):
        # step decay keeps late epochs from oscillating
        cur_lr = lr if epoch < epochs // 2 else lr * 0.1
        for g in opt.param_groups:
            g["lr"] = cur_lr
        order = np.random.default_rng([seed, epoch]).permutation(len(records))
        for start in range(0, len(records), batch_size):
            idx = order[start : start + batch_size]
            batch = tensors[idx]
            batch_labels = [labels[k] for k in idx]
            out = adapter.module(batch)
            loss = _toy_loss(out, batch_labels, adapter.anchor, adapter.person_class_id)
            opt.zero_grad()
            loss.backward()
            opt.step()
    adapter.module.eval()
    return adapter


def save_toy_detector(adapter: ToyConvDetector, path) -> None:
    torch.save(
        {"anchor": list(adapter.anchor), "state": adapter.module.state_dict()}, path
    )


def load_toy_detector(path) -> ToyConvDetector:
    payload = torch.load(path, weights_only=True)
    adapter = ToyConvDetector(anchor=tuple(payload["anchor"]))
    adapter.module.load_state_dict(payload["state"])
    adapter.module.eval()
    return adapter


class TorchvisionDetectorAdapter(DetectorAdapter):
    """Faster/Mask R-CNN backends; weights are loaded from a local directory,
    never downloaded implicitly."""

    _BUILDERS = {
        "frcnn-resnet50": "fasterrcnn_resnet50_fpn",
        "frcnn-mnv3-large": "fasterrcnn_mobilenet_v3_large_fpn",
        "frcnn-mnv3-large-320": "fasterrcnn_mobilenet_v3_large_320_fpn",
        "mask-rcnn": "maskrcnn_resnet50_fpn",
    }

    def __init__(self, detector_id: str, weights_dir):
        if detector_id not in self._BUILDERS:
            raise DetectorUnavailableError(f"unknown torchvision backend {detector_id}")
        weights_path = Path(weights_dir or ".") / f"{detector_id}.pth"
        if not weights_path.exists():
            raise DetectorUnavailableError(
                f"weights for {detector_id} not found at {weights_path}; "
                "download them explicitly and point --weights-dir at them"
            )
        from torchvision.models import detection as tvdet

        builder = getattr(tvdet, self._BUILDERS[detector_id])
        self.module = builder(weights=None, weights_backbone=None, num_classes=91)
        state = torch.load(weights_path, map_location="cpu", weights_only=True)
        self.module.load_state_dict(state)
        self.module.eval()
        self.detector_id = detector_id
        self.person_class_id = 1  # COCO person
        self.capabilities = frozenset({"detect", "loss"})

    def _detect_impl(self, image: ImageTensor, score_threshold: float):
        x = images_to_tensor([image])
        with torch.no_grad():
            out = self.module(x)[0]
        dets = []
        for box, label, score in zip(out["boxes"], out["labels"], out["scores"]):
            if float(score) < score_threshold:
                continue
            x0, y0, x1, y1 = (float(v) for v in box)
            if x0 >= x1 or y0 >= y1:
                continue
            dets.append(
                Detection(BoundingBox(x0, y0, x1, y1), int(label), float(score))
            )
        return dets

    def _loss_impl(self, images: torch.Tensor, labels: Sequence[LabelSet]):
        targets = []
        for labelset in labels:
            boxes = [lb.box.as_tuple() for lb in labelset.boxes]
            classes = [lb.class_id for lb in labelset.boxes]
            targets.append(
                {
                    "boxes": torch.tensor(boxes, dtype=torch.float32).reshape(-1, 4),
                    "labels": torch.tensor(classes, dtype=torch.int64),
                }
            )
        # torchvision detection models only emit losses in train mode
        self.module.train()
        try:
            loss_dict = self.module([img for img in images], targets)
        finally:
            self.module.eval()
        # sum of all detector-native terms, unweighted
        return sum(loss_dict.values())


_KNOWN_DETECTORS = (
    "frcnn-resnet50",
    "frcnn-mnv3-large",
    "frcnn-mnv3-large-320",
    "mask-rcnn",
    "yolo-s",
    "toy-conv",
)


def create_adapter(detector_id: str, weights_dir=None, seed: int = 0) -> DetectorAdapter:
    """Adapter registry keyed by detector id."""
    if detector_id == "toy-conv":
        return ToyConvDetector(seed=seed)
    if detector_id in TorchvisionDetectorAdapter._BUILDERS:
        return TorchvisionDetectorAdapter(detector_id, weights_dir)
    if detector_id == "yolo-s":
        raise DetectorUnavailableError(
            "yolo-s has no bundled backend; export the model yourself and "
            "adapt it via DetectorAdapter"
        )
    raise DetectorUnavailableError(f"unknown detector id {detector_id!r}")


def generate_pseudo_ground_truth(
    adapter: DetectorAdapter,
    manifest: FrameManifest,
    base_dir,
    score_threshold: float = 0.5,
) -> FrameManifest:
    """Run the detector on clean frames and record person detections as labels."""
    provenance = Provenance("pseudo", adapter.detector_id, score_threshold)
    labels: dict[str, LabelSet] = {}
    for record in manifest:
        try:
            image = load_image(resolve_frame_path(record, base_dir))
            dets = adapter.detect(image, score_threshold)
        except Exception as exc:
            raise RuntimeError(f"pseudo-GT failed on frame {record.frame_id}") from exc
        boxes = tuple(
            LabeledBox(d.box, d.class_id, d.score)
            for d in dets
            if d.class_id == adapter.person_class_id
        )
        labels[record.frame_id] = LabelSet(record.frame_id, boxes, provenance)
    return manifest.with_labels(labels)


@dataclass(frozen=True)
class CrossModelGrid:
    row_names: tuple[str, ...]  # obfuscator tags (detector they were trained with)
    col_names: tuple[str, ...]  # evaluation adapter ids
    cells: tuple[tuple[Optional[float], ...], ...]  # person AP %, None = failed
    errors: tuple[str, ...]
    gt_source: str

    def to_text(self) -> str:
        width = max(12, max((len(c) for c in self.col_names), default=12) + 2)
        lines = [
            "person AP (%) of each detector on frames obfuscated by each model",
            f"pseudo-GT source: {self.gt_source} on clean frames",
            "",
            f"{'trained on':<24}" + "".join(f"{c:>{width}}" for c in self.col_names),
        ]
        for name, row in zip(self.row_names, self.cells):
            cells = "".join(
                f"{('--' if v is None else f'{v:.1f}'):>{width}}" for v in row
            )
            lines.append(f"{name:<24}{cells}")
        if self.errors:
            lines.append("")
            lines.extend(f"failed cell: {e}" for e in self.errors)
        lines.append("")
        lines.append(
            "note: cells are absolute person AP percentages against the "
            "stated pseudo-GT source"
        )
        return "\n".join(lines)


def cross_model_matrix(
    obfuscators: Sequence[tuple[str, Optional[ModelHandle]]],
    adapters: Sequence[DetectorAdapter],
    manifest: FrameManifest,
    base_dir,
    gt_source_adapter: DetectorAdapter,
    gt_score_threshold: float = 0.5,
    det_score_threshold: float = 0.05,
    iou_threshold: float = 0.5,
) -> CrossModelGrid:
    """AP grid: rows = obfuscators (None = identity), cols = eval detectors."""
    from .models import forward
    from .privacy_eval.ap import average_precision

    labeled = generate_pseudo_ground_truth(
        gt_source_adapter, manifest, base_dir, gt_score_threshold
    )
    gt = {
        r.frame_id: r.labels.person_boxes(gt_source_adapter.person_class_id)
        for r in labeled
    }
    clean = {
        r.frame_id: load_image(resolve_frame_path(r, base_dir)) for r in manifest
    }

    rows = []
    errors = []
    for name, obf in obfuscators:
        if obf is None:
            obf_images = clean
        else:
            frame_ids = list(clean)
            outputs = forward(obf, [clean[fid] for fid in frame_ids])
            obf_images = dict(zip(frame_ids, outputs))
        row = []
        for adapter in adapters:
            try:
                dets = {
                    fid: [
                        d
                        for d in adapter.detect(img, det_score_threshold)
                        if d.class_id == adapter.person_class_id
                    ]
                    for fid, img in obf_images.items()
                }
                result = average_precision(dets, gt, iou_threshold)
                row.append(result.person_ap)
            except Exception as exc:
                row.append(None)
                errors.append(f"{name} x {adapter.detector_id}: {exc}")
        rows.append(tuple(row))

    return CrossModelGrid(
        row_names=tuple(name for name, _ in obfuscators),
        col_names=tuple(a.detector_id for a in adapters),
        cells=tuple(rows),
        errors=tuple(errors),
        gt_source=gt_source_adapter.detector_id,
    )

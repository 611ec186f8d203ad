"""Average precision for person detection against (pseudo-)ground truth.

Protocol: detections pooled across frames and sorted by descending score;
each detection greedily matches the highest-IoU unmatched ground-truth box
in its own frame (IoU >= threshold -> TP, else FP). AP is the all-point
interpolation (area under the precision envelope), reported as a percentage.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from ..core import BoundingBox, Detection, iou

DEFAULT_IOU_THRESHOLD = 0.5


class UndefinedAPError(ValueError):
    """AP is undefined when there are no ground-truth boxes at all."""


@dataclass(frozen=True)
class APResult:
    person_ap: float  # percentage in [0, 100]
    iou_threshold: float
    pr_curve: tuple[tuple[float, float], ...]  # (recall, precision) per detection
    true_positives: int
    false_positives: int
    total_gt: int

    def to_dict(self) -> dict:
        return {
            "person_ap": self.person_ap,
            "iou_threshold": self.iou_threshold,
            "pr_curve": [list(p) for p in self.pr_curve],
            "true_positives": self.true_positives,
            "false_positives": self.false_positives,
            "total_gt": self.total_gt,
        }


def average_precision(
    detections: Mapping[str, Sequence[Detection]],
    ground_truth: Mapping[str, Sequence[BoundingBox]],
    iou_threshold: float = DEFAULT_IOU_THRESHOLD,
) -> APResult:
    total_gt = sum(len(boxes) for boxes in ground_truth.values())
    if total_gt == 0:
        raise UndefinedAPError("no ground-truth boxes; AP is undefined")

    # pool detections; sort by score desc with a deterministic tie-break
    pooled = []
    for frame_id, dets in detections.items():
        for idx, det in enumerate(dets):
            pooled.append((frame_id, idx, det))
    pooled.sort(key=lambda t: (-t[2].score, t[0], t[1]))

    matched: dict[str, list[bool]] = {
        fid: [False] * len(boxes) for fid, boxes in ground_truth.items()
    }
    tp_flags = []
    for frame_id, _, det in pooled:
        gt_boxes = ground_truth.get(frame_id, ())
        best_iou = 0.0
        best_j = -1
        for j, gt in enumerate(gt_boxes):
            if matched[frame_id][j]:
                continue
            overlap = iou(det.box, gt)
            if overlap >= iou_threshold and overlap > best_iou:
                best_iou = overlap
                best_j = j
        if best_j >= 0:
            matched[frame_id][best_j] = True
            tp_flags.append(True)
        else:
            tp_flags.append(False)

    curve = []
    tp = fp = 0
    for flag in tp_flags:
        if flag:
            tp += 1
        else:
            fp += 1
        curve.append((tp / total_gt, tp / (tp + fp)))

    return APResult(
        person_ap=100.0 * _envelope_area(curve),
        iou_threshold=iou_threshold,
        pr_curve=tuple(curve),
        true_positives=tp,
        false_positives=fp,
        total_gt=total_gt,
    )


def _envelope_area(curve: list[tuple[float, float]]) -> float:
    """Area under the running-max-from-the-right precision envelope."""
    if not curve:
        return 0.0
    area = 0.0
    prev_recall = 0.0
    envelope = 0.0
    # walk left to right, but the envelope needs the max over points to the right
    env = [0.0] * len(curve)
    running = 0.0
    for i in range(len(curve) - 1, -1, -1):
        running = max(running, curve[i][1])
        env[i] = running
    for (recall, _), envelope in zip(curve, env):
        area += (recall - prev_recall) * envelope
        prev_recall = recall
    return area

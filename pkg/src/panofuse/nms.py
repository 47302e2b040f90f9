"""Duplicate suppression for open-vocabulary detections.

Open-vocabulary detectors fire several near-identical boxes for one object
when prompted with related labels ("chair", "wooden chair"). IoU-based
per-class suppression cannot see these as duplicates because the labels
differ, so the custom variant works on box coordinates instead:

  rule (a): two boxes whose top-left and bottom-right corners each lie within
            ``tau_coord`` pixels (Chebyshev, per corner) are duplicates
            regardless of label; the lower-priority one is suppressed.
  rule (b): of two same-category boxes nested one inside the other (closed
            intervals), the lower-priority one is suppressed.

Priority is (confidence desc, caption-provenance desc, input order). The
traditional per-class NMS is kept as an ablation baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigInvalid
from .retrieval import normalize_label


@dataclass(frozen=True)
class NmsConfig:
    tau_coord: float = 1.5
    baseline_iou: float = 0.5
    prefer_caption: bool = True

    def validate(self) -> None:
        if self.tau_coord < 0:
            raise ConfigInvalid("tau_coord must be >= 0")
        if not (0.0 < self.baseline_iou <= 1.0):
            raise ConfigInvalid("baseline_iou must be in (0, 1]")


def box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union


def corners_within(a, b, tau: float) -> bool:
    """Per-corner Chebyshev test: both corresponding corners within tau."""
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    return (
        max(abs(ax0 - bx0), abs(ay0 - by0)) <= tau
        and max(abs(ax1 - bx1), abs(ay1 - by1)) <= tau
    )


def box_contains(outer, inner) -> bool:
    """Closed-interval containment of inner in outer."""
    ox0, oy0, ox1, oy1 = outer
    ix0, iy0, ix1, iy1 = inner
    return ox0 <= ix0 and oy0 <= iy0 and ix1 <= ox1 and iy1 <= oy1


def _priority_order(detections, cfg: NmsConfig):
    def key(i):
        d = detections[i]
        caption_rank = 0 if (cfg.prefer_caption and d.from_caption) else 1
        return (-d.confidence, caption_rank, i)

    return sorted(range(len(detections)), key=key)


def _category_keys(detections, categories):
    if categories is not None:
        keys = list(categories)
        if len(keys) != len(detections):
            raise ConfigInvalid("categories must parallel detections")
        return keys
    # Without retrieval results, fall back to normalized raw labels.
    return [normalize_label(d.label) for d in detections]


def _custom_nms_kept_indices(detections, cfg: NmsConfig, categories=None):
    cfg.validate()
    if len(detections) <= 1:
        return sorted(range(len(detections)))
    cats = _category_keys(detections, categories)

    kept: list[int] = []
    for i in _priority_order(detections, cfg):
        box = detections[i].bbox
        suppressed = False
        for k in kept:
            kbox = detections[k].bbox
            if corners_within(box, kbox, cfg.tau_coord):
                suppressed = True
                break
            if cats[i] == cats[k] and (
                box_contains(kbox, box) or box_contains(box, kbox)
            ):
                suppressed = True
                break
        if not suppressed:
            kept.append(i)
    return sorted(kept)


def custom_nms(detections, cfg: NmsConfig = NmsConfig(), categories=None):
    """Coordinate-proximity suppression; survivors keep their input order.

    ``categories`` optionally supplies one unified-category key per detection
    for rule (b); otherwise normalized raw labels are compared. The nesting
    test in rule (b) runs both ways so that no two same-category survivors
    are ever nested, whichever of the pair ranked higher.
    """
    return [detections[i] for i in _custom_nms_kept_indices(detections, cfg, categories)]


def per_class_nms(detections, cfg: NmsConfig = NmsConfig(), categories=None):
    """Greedy IoU suppression within each unified category (the baseline).

    Boxes of the same category with IoU >= ``baseline_iou`` against an
    already-kept box are dropped, in descending confidence order.
    """
    cfg.validate()
    if len(detections) <= 1:
        return list(detections)
    cats = _category_keys(detections, categories)

    kept: list[int] = []
    for i in _priority_order(detections, cfg):
        box = detections[i].bbox
        if any(
            cats[i] == cats[k] and box_iou(box, detections[k].bbox) >= cfg.baseline_iou
            for k in kept
        ):
            continue
        kept.append(i)

    return [detections[i] for i in sorted(kept)]

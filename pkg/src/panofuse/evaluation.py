"""Geometric, detection, and panoptic quality metrics.

Geometric metrics compare a reconstructed point cloud R against ground truth
G via exact nearest-neighbor distances (KD-tree). Inputs are in meters;
reports are in centimeters, matching how such numbers are usually tabulated.

Two chamfer flavors are emitted side by side because they answer different
questions: ``chamfer_squared_cm2`` is the raw sum of squared distances in
both directions, while ``chamfer_cm`` is the symmetric mean of the two
directed mean-absolute errors (the form comparable across cloud sizes).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import AllPointsBackground, DimensionMismatch, EmptyCloud


def _as_points(cloud) -> np.ndarray:
    pts = getattr(cloud, "points", cloud)
    pts = np.asarray(pts, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise EmptyCloud(f"expected (N,3) points, got {pts.shape}")
    return pts


@dataclass
class GeometricReport:
    accuracy_cm: float  # mean |R -> G|
    completeness_cm: float  # mean |G -> R|
    chamfer_squared_cm2: float  # sum of squared NN distances, both directions
    chamfer_cm: float  # (accuracy + completeness) / 2
    hausdorff_cm: float
    completion_ratio_pct: float  # % of G within the threshold of R (closed)
    threshold_cm: float
    f1_detail: float | None = None

    def to_json(self) -> dict:
        return {
            "accuracy_cm": self.accuracy_cm,
            "completeness_cm": self.completeness_cm,
            "chamfer_squared_cm2": self.chamfer_squared_cm2,
            "chamfer_cm": self.chamfer_cm,
            "hausdorff_cm": self.hausdorff_cm,
            "completion_ratio_pct": self.completion_ratio_pct,
            "threshold_cm": self.threshold_cm,
            "f1_detail": self.f1_detail,
        }

    def csv_row(self):
        """Header + row in the usual table column order."""
        header = "completeness_cm,accuracy_cm,chamfer_cm,hausdorff_cm,completion_ratio_pct,f1_detail"
        fields = [
            self.completeness_cm,
            self.accuracy_cm,
            self.chamfer_cm,
            self.hausdorff_cm,
            self.completion_ratio_pct,
            self.f1_detail if self.f1_detail is not None else "",
        ]
        return header, ",".join(str(x) for x in fields)


def geometric_metrics(reconstruction, ground_truth, threshold: float = 0.05) -> GeometricReport:
    """All geometric metrics between reconstruction R and ground truth G.

    ``threshold`` (meters) is the completion-ratio cutoff; the comparison is
    closed (a point exactly at the threshold counts as covered).
    """
    r = _as_points(reconstruction)
    g = _as_points(ground_truth)
    if r.shape[0] == 0 or g.shape[0] == 0:
        raise EmptyCloud("both clouds must be nonempty")

    d_r_to_g, _ = cKDTree(g).query(r)
    d_g_to_r, _ = cKDTree(r).query(g)

    acc_cm = float(d_r_to_g.mean()) * 100.0
    comp_cm = float(d_g_to_r.mean()) * 100.0
    sq_sum_cm2 = float((d_r_to_g**2).sum() + (d_g_to_r**2).sum()) * 100.0**2
    haus_cm = float(max(d_r_to_g.max(), d_g_to_r.max())) * 100.0
    completion = float((d_g_to_r <= threshold).mean()) * 100.0
    return GeometricReport(
        accuracy_cm=acc_cm,
        completeness_cm=comp_cm,
        chamfer_squared_cm2=sq_sum_cm2,
        chamfer_cm=0.5 * (acc_cm + comp_cm),
        hausdorff_cm=haus_cm,
        completion_ratio_pct=completion,
        threshold_cm=threshold * 100.0,
    )


def f1_detail(reconstruction, ground_truth, r_categories, g_categories,
              background, threshold: float = 0.05) -> float:
    """Detail F1 after dropping background-labeled points from both clouds.

    Precision: fraction of retained R within the threshold of retained G;
    recall: the reverse; F1 is their harmonic mean.
    """
    r = _as_points(reconstruction)
    g = _as_points(ground_truth)
    r_cat = np.asarray(r_categories, dtype=np.int64)
    g_cat = np.asarray(g_categories, dtype=np.int64)
    bg = set(int(b) for b in background)
    r_keep = ~np.isin(r_cat, list(bg)) if bg else np.ones(len(r_cat), dtype=bool)
    g_keep = ~np.isin(g_cat, list(bg)) if bg else np.ones(len(g_cat), dtype=bool)
    r, g = r[r_keep], g[g_keep]
    if r.shape[0] == 0 or g.shape[0] == 0:
        raise AllPointsBackground("nothing left after background removal")
    precision = float((cKDTree(g).query(r)[0] <= threshold).mean())
    recall = float((cKDTree(r).query(g)[0] <= threshold).mean())
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# --- panoptic quality --------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    """One panoptic segment: a category and its binary mask."""

    category_id: int
    mask: np.ndarray  # (H,W) bool

    def area(self) -> int:
        return int(self.mask.sum())


@dataclass
class PanopticReport:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    map_at: dict = field(default_factory=dict)  # iou threshold -> mAP

    def to_json(self) -> dict:
        return {
            "pq": self.pq,
            "sq": self.sq,
            "rq": self.rq,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
            "map_at": {str(k): v for k, v in sorted(self.map_at.items())},
        }

    def csv_row(self):
        thresholds = sorted(self.map_at)
        header = "pq,rq,sq," + ",".join(f"map_{t}" for t in thresholds)
        row = [self.pq, self.rq, self.sq] + [self.map_at[t] for t in thresholds]
        return header, ",".join(str(x) for x in row)


class PanopticAggregator:
    """Accumulates segment matches across frames, then reports PQ/SQ/RQ.

    Matching follows the standard rule: a prediction and a ground-truth
    segment of the same category match when their IoU exceeds 0.5, which
    makes the matching unique.
    """

    def __init__(self):
        self.tp = 0
        self.fp = 0
        self.fn = 0
        self.iou_sum = 0.0

    def update(self, pred_segments, gt_segments) -> None:
        preds = list(pred_segments)
        gts = list(gt_segments)
        if preds and gts:
            shapes = {s.mask.shape for s in preds} | {s.mask.shape for s in gts}
            if len(shapes) > 1:
                raise DimensionMismatch(f"segment masks disagree: {shapes}")
        matched_pred = set()
        matched_gt = set()
        for gi, gt in enumerate(gts):
            g_area = gt.area()
            for pi, pred in enumerate(preds):
                if pi in matched_pred or pred.category_id != gt.category_id:
                    continue
                inter = int(np.logical_and(pred.mask, gt.mask).sum())
                union = pred.area() + g_area - inter
                if union == 0:
                    continue
                iou = inter / union
                if iou > 0.5:
                    matched_pred.add(pi)
                    matched_gt.add(gi)
                    self.tp += 1
                    self.iou_sum += iou
                    break
        self.fp += len(preds) - len(matched_pred)
        self.fn += len(gts) - len(matched_gt)

    def report(self) -> PanopticReport:
        denom = self.tp + 0.5 * self.fp + 0.5 * self.fn
        sq = self.iou_sum / self.tp if self.tp > 0 else 0.0
        rq = self.tp / denom if denom > 0 else 0.0
        pq = self.iou_sum / denom if denom > 0 else 0.0
        return PanopticReport(pq=pq, sq=sq, rq=rq, tp=self.tp, fp=self.fp, fn=self.fn)


def panoptic_quality(pred_segments, gt_segments) -> PanopticReport:
    """PQ/SQ/RQ for a single set of predicted vs ground-truth segments."""
    agg = PanopticAggregator()
    agg.update(pred_segments, gt_segments)
    return agg.report()


# --- detection metrics -------------------------------------------------------


def _box_iou(a, b) -> float:
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


@dataclass(frozen=True)
class ScoredBox:
    box: tuple
    score: float
    category_id: int = 0
    frame: int = 0


@dataclass(frozen=True)
class GtBox:
    box: tuple
    category_id: int = 0
    frame: int = 0


def _greedy_match_flags(preds, gts, iou_thr: float):
    """Confidence-ordered greedy matching; returns per-pred TP flags."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    taken = [False] * len(gts)
    flags = [False] * len(preds)
    for i in order:
        p = preds[i]
        best_iou, best_j = 0.0, -1
        for j, gt in enumerate(gts):
            if taken[j] or gt.frame != p.frame or gt.category_id != p.category_id:
                continue
            iou = _box_iou(p.box, gt.box)
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= iou_thr:
            taken[best_j] = True
            flags[i] = True
    return flags, order


def detection_prf(preds, gts, iou: float = 0.5):
    """Precision, recall, F1 of scored boxes vs ground-truth boxes.

    Matching is confidence-ordered, greedy, category-agnostic, at the closed
    IoU threshold. With zero predictions, precision reports as 0 by
    convention.
    """
    preds = [p if isinstance(p, ScoredBox) else ScoredBox(*p) for p in preds]
    preds = [ScoredBox(p.box, p.score, 0, p.frame) for p in preds]
    gts = [g if isinstance(g, GtBox) else GtBox(*g) for g in gts]
    gts = [GtBox(g.box, 0, g.frame) for g in gts]
    flags, _ = _greedy_match_flags(preds, gts, iou)
    tp = sum(flags)
    precision = tp / len(preds) if preds else 0.0
    recall = tp / len(gts) if gts else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _average_precision(preds, gts, iou_thr: float) -> float:
    if not gts:
        return 0.0
    flags, order = _greedy_match_flags(preds, gts, iou_thr)
    tps = np.array([flags[i] for i in order], dtype=np.float64)
    if tps.size == 0:
        return 0.0
    cum_tp = np.cumsum(tps)
    cum_fp = np.cumsum(1.0 - tps)
    recall = cum_tp / len(gts)
    precision = cum_tp / (cum_tp + cum_fp)
    # All-point interpolation: integrate the precision envelope over recall.
    mrec = np.concatenate(([0.0], recall, [1.0]))
    mpre = np.concatenate(([0.0], precision, [0.0]))
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.flatnonzero(mrec[1:] != mrec[:-1]) + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def mean_ap(preds, gts, iou_thresholds=(0.3, 0.4, 0.5)) -> dict:
    """mAP over the categories present in ground truth, per IoU threshold.

    Predictions are greedily matched per category in descending confidence;
    AP uses all-point interpolation of the precision-recall curve.
    """
    preds = [p if isinstance(p, ScoredBox) else ScoredBox(*p) for p in preds]
    gts = [g if isinstance(g, GtBox) else GtBox(*g) for g in gts]
    categories = sorted({g.category_id for g in gts})
    out = {}
    for thr in iou_thresholds:
        if not categories:
            out[thr] = 0.0
            continue
        aps = []
        for cat in categories:
            p_c = [p for p in preds if p.category_id == cat]
            g_c = [g for g in gts if g.category_id == cat]
            aps.append(_average_precision(p_c, g_c, thr))
        out[thr] = float(np.mean(aps))
    return out

"""Mock open-vocabulary detection + segmentation.

Stands in for a grounded detector feeding a promptable segmenter: connected
regions that differ from the border background color become instances,
ordered by area, and the extracted labels are assigned to them in turn.
Deterministic by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage


@dataclass
class MockDetection:
    bbox: tuple  # (x_min, y_min, x_max, y_max)
    confidence: float
    label: str
    from_caption: bool
    mask: np.ndarray  # (H,W) bool
    embedding: np.ndarray | None = None  # attached after text embedding


def _background_color(rgb: np.ndarray) -> np.ndarray:
    border = np.concatenate(
        [rgb[0], rgb[-1], rgb[:, 0], rgb[:, -1]], axis=0
    ).reshape(-1, rgb.shape[2])
    colors, counts = np.unique(border, axis=0, return_counts=True)
    return colors[np.argmax(counts)]


def segment_blobs(rgb: np.ndarray, min_area: int = 20):
    """Foreground connected components, largest first; ties by position."""
    bg = _background_color(rgb)
    fg = np.abs(rgb.astype(np.int32) - bg.astype(np.int32)).max(axis=2) > 12
    labeled, count = ndimage.label(fg)
    blobs = []
    for idx in range(1, count + 1):
        mask = labeled == idx
        area = int(mask.sum())
        if area < min_area:
            continue
        ys, xs = np.nonzero(mask)
        blobs.append((area, int(ys.min()), int(xs.min()), mask))
    blobs.sort(key=lambda b: (-b[0], b[1], b[2]))
    return [b[3] for b in blobs]


def detect(rgb: np.ndarray, caption_labels, tag_labels, cfg) -> list:
    """Pair segmented blobs with extracted labels.

    Caption labels are consumed first (they keep the provenance flag), then
    tags when enabled; extra blobs cycle through the pool. Confidence decays
    with rank and detections under the box threshold are dropped, mirroring
    how a detector's score cutoff behaves.
    """
    pool = [(label, True) for label in caption_labels]
    if cfg.use_tags:
        pool += [(label, False) for label in tag_labels]
    blobs = segment_blobs(rgb, cfg.min_blob_area)
    if not pool or not blobs:
        return []
    # With tags enabled, every prompt fires: surplus labels revisit blobs and
    # produce the near-duplicate detections downstream NMS exists to remove.
    total = max(len(blobs), len(pool)) if cfg.use_tags else len(blobs)
    out = []
    for rank in range(total):
        mask = blobs[rank % len(blobs)]
        label, from_caption = pool[rank % len(pool)]
        confidence = max(0.9 - 0.05 * rank, 0.05)
        if confidence < cfg.box_threshold:
            continue
        ys, xs = np.nonzero(mask)
        bbox = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
        out.append(
            MockDetection(
                bbox=bbox,
                confidence=confidence,
                label=label,
                from_caption=from_caption,
                mask=mask,
            )
        )
    return out

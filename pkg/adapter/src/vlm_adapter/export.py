"""Dataset export: write the engine's manifest format from adapter output.

This module owns the wire format only; it never imports the engine. The
contract (documented in the engine README) is: manifest.json + categories
JSON + raw uint16 LE depth blobs + a shared float32 LE embedding blob, RLE
masks row-major with a leading zero count.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .config import ValidationFailed

SCHEMA_VERSION = 1
SIZE_POLICY = {"Small": 0.02, "Medium": 0.03, "Large": 0.05, "Freespace": 0.30}
MAX_DEPTH_M = 20.0


def encode_rle(mask: np.ndarray) -> list:
    flat = np.asarray(mask, dtype=bool).ravel(order="C")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return counts


def _check_pose(pose, frame_name):
    if pose is None:
        raise ValidationFailed(f"{frame_name}: missing pose")
    mat = np.asarray(pose, dtype=np.float64)
    if mat.size != 16:
        raise ValidationFailed(f"{frame_name}: pose needs 16 numbers")
    mat = mat.reshape(4, 4)
    r = mat[:3, :3]
    if not np.allclose(r.T @ r, np.eye(3), atol=1e-6) or abs(np.linalg.det(r) - 1) > 1e-6:
        raise ValidationFailed(f"{frame_name}: pose rotation is not a rotation")
    if not np.allclose(mat[3], [0, 0, 0, 1], atol=1e-6):
        raise ValidationFailed(f"{frame_name}: pose last row must be [0,0,0,1]")
    return mat


class ManifestExporter:
    """Accumulates frames and writes a complete dataset directory."""

    def __init__(self, out_dir, intrinsics: dict, embedding_dim: int,
                 depth_scale: float = 0.001):
        self.out = Path(out_dir)
        self.intrinsics = dict(intrinsics)
        self.embedding_dim = int(embedding_dim)
        self.depth_scale = float(depth_scale)
        self.frames = []
        self._emb_blob = bytearray()
        self._emb_offsets: dict[bytes, int] = {}

    def _embedding_ref(self, vec: np.ndarray, frame_name: str) -> dict:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.embedding_dim,):
            raise ValidationFailed(
                f"{frame_name}: embedding dim {vec.shape} != {self.embedding_dim}"
            )
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > 1e-4:
            raise ValidationFailed(f"{frame_name}: embedding norm {norm:.6f} not unit")
        raw = np.asarray(vec, dtype="<f4").tobytes()
        if raw not in self._emb_offsets:
            self._emb_offsets[raw] = len(self._emb_blob)
            self._emb_blob.extend(raw)
        return {"path": "embeddings.bin", "offset": self._emb_offsets[raw]}

    def add_frame(self, index: int, pose, depth_m: np.ndarray, detections,
                  blurry: bool, rgb_rel: str | None = None) -> None:
        name = f"frame {index}"
        mat = _check_pose(pose, name)
        w, h = int(self.intrinsics["width"]), int(self.intrinsics["height"])
        depth_m = np.asarray(depth_m, dtype=np.float64)
        if depth_m.shape != (h, w):
            raise ValidationFailed(f"{name}: depth shape {depth_m.shape} != ({h},{w})")
        positive = depth_m[depth_m > 0]
        if positive.size and positive.max() > MAX_DEPTH_M:
            raise ValidationFailed(f"{name}: depth exceeds {MAX_DEPTH_M} m")

        dets_json = []
        for di, det in enumerate(detections):
            x0, y0, x1, y1 = det.bbox
            if not (x0 < x1 and y0 < y1):
                raise ValidationFailed(f"{name}: detection {di} has a degenerate bbox")
            if not (0.0 <= det.confidence <= 1.0):
                raise ValidationFailed(f"{name}: detection {di} confidence out of range")
            if det.mask.shape != (h, w):
                raise ValidationFailed(f"{name}: detection {di} mask shape mismatch")
            dets_json.append(
                {
                    "bbox": [float(x0), float(y0), float(x1), float(y1)],
                    "confidence": float(det.confidence),
                    "label": det.label,
                    "from_caption": bool(det.from_caption),
                    "embedding": self._embedding_ref(det.embedding, name),
                    "mask": {"rle": [int(c) for c in encode_rle(det.mask)]},
                }
            )

        depth_rel = f"depth/{index:06d}.bin"
        depth_path = self.out / depth_rel
        depth_path.parent.mkdir(parents=True, exist_ok=True)
        units = np.round(depth_m / self.depth_scale)
        if units.max() > np.iinfo(np.uint16).max or units.min() < 0:
            raise ValidationFailed(f"{name}: depth outside uint16 range at this scale")
        depth_path.write_bytes(units.astype("<u2").tobytes())

        self.frames.append(
            {
                "index": index,
                "rgb_path": rgb_rel,
                "depth_path": depth_rel,
                "pose": [float(x) for x in mat.reshape(-1)],
                "intrinsics": self.intrinsics,
                "blurry": bool(blurry),
                "detections": dets_json,
            }
        )

    def write(self, category_rows) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / "embeddings.bin").write_bytes(bytes(self._emb_blob))
        names = [row["name"] for row in category_rows]
        if len(set(names)) != len(names):
            raise ValidationFailed("duplicate category names in table")
        with open(self.out / "categories.json", "w", encoding="utf-8") as f:
            json.dump(category_rows, f, sort_keys=True, separators=(",", ":"))
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "frame_count": len(self.frames),
            "embedding_dim": self.embedding_dim,
            "depth": {
                "scale": self.depth_scale,
                "width": int(self.intrinsics["width"]),
                "height": int(self.intrinsics["height"]),
            },
            "size_policy": SIZE_POLICY,
            "category_table": "categories.json",
            "frames": self.frames,
        }
        out = self.out / "manifest.json"
        with open(out, "w", encoding="utf-8") as f:
            json.dump(manifest, f, sort_keys=True, separators=(",", ":"))
        return out

"""End-to-end conversion of a raw RGB-D sequence into an engine dataset.

Source layout:

    source/
      images/000000.png ...        RGB frames
      depth/000000.bin ...         raw uint16 LE rasters (or 16-bit PNG)
      poses.txt                    one camera-to-world 4x4 per line, 16 numbers
      intrinsics.txt               fx fy cx cy width height
      captions.json                mock caption/tag lookup per image stem

The pipeline extracts labels, segments instances, embeds texts (cached by
normalized string), and exports the manifest plus the full COCO-Stuff
category table. Mock mode is fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .config import AdapterConfig, ValidationFailed
from .detect import detect
from .embed import TextEmbedder, category_table_rows
from .export import ManifestExporter
from .extract import extract_labels, load_caption_table


@dataclass
class SourceFrame:
    index: int
    image_path: Path
    depth_path: Path
    pose: np.ndarray | None


def read_intrinsics(source: Path) -> dict:
    parts = (source / "intrinsics.txt").read_text().split()
    if len(parts) < 6:
        raise ValidationFailed("intrinsics.txt needs: fx fy cx cy width height")
    fx, fy, cx, cy = (float(p) for p in parts[:4])
    width, height = int(parts[4]), int(parts[5])
    return {"fx": fx, "fy": fy, "cx": cx, "cy": cy, "width": width, "height": height}


def read_poses(source: Path) -> list:
    poses = []
    for line in (source / "poses.txt").read_text().splitlines():
        line = line.strip()
        if not line:
            poses.append(None)  # explicitly missing pose
            continue
        poses.append(np.array([float(x) for x in line.split()]))
    return poses


def discover_frames(source: Path) -> list:
    source = Path(source)
    images = sorted((source / "images").glob("*.png"))
    poses = read_poses(source)
    frames = []
    for i, image_path in enumerate(images):
        stem = image_path.stem
        depth_path = source / "depth" / f"{stem}.bin"
        if not depth_path.exists():
            depth_path = source / "depth" / f"{stem}.png"
        frames.append(
            SourceFrame(
                index=i,
                image_path=image_path,
                depth_path=depth_path,
                pose=poses[i] if i < len(poses) else None,
            )
        )
    return frames


def load_depth(path: Path, width: int, height: int, scale: float) -> np.ndarray:
    if path.suffix == ".png":
        raw = np.asarray(Image.open(path), dtype=np.uint16)
    else:
        blob = path.read_bytes()
        if len(blob) != 2 * width * height:
            raise ValidationFailed(f"{path.name}: depth blob has wrong size")
        raw = np.frombuffer(blob, dtype="<u2").reshape(height, width)
    return raw.astype(np.float64) * scale


def convert(source_dir, out_dir, cfg: AdapterConfig | None = None) -> Path:
    """Run the full adapter; returns the manifest path."""
    cfg = cfg or AdapterConfig()
    cfg.validate()
    source = Path(source_dir)
    intrinsics = read_intrinsics(source)
    frames = discover_frames(source)
    if not frames:
        raise ValidationFailed("no frames under images/")
    caption_table = load_caption_table(source)

    embedder = TextEmbedder(cfg)
    exporter = ManifestExporter(
        out_dir, intrinsics, cfg.embedding_dim, depth_scale=cfg.depth_scale
    )
    for frame in frames:
        caption_labels, tag_labels, blurry = extract_labels(
            frame.image_path, cfg, caption_table
        )
        rgb = np.asarray(Image.open(frame.image_path).convert("RGB"))
        detections = detect(rgb, caption_labels, tag_labels, cfg)
        for det in detections:
            det.embedding = embedder.embed(det.label)
        depth = load_depth(
            frame.depth_path, intrinsics["width"], intrinsics["height"], cfg.depth_scale
        )
        exporter.add_frame(
            frame.index,
            frame.pose,
            depth,
            detections,
            blurry=blurry,
            rgb_rel=None,
        )
    return exporter.write(category_table_rows(embedder))

"""Fixture source sequence: 5 synthetic frames with colored-rectangle
objects, raw depth, valid poses, and a mock caption table. Frame 4 is
blurred."""

import json

import numpy as np
import pytest
from PIL import Image, ImageFilter

WIDTH, HEIGHT = 64, 48
BG = (128, 128, 128)

CAPTIONS = {
    "000000": {"caption": "a wooden desk with a laptop", "tags": ["desk", "laptop"]},
    "000001": {"caption": "a chair next to the wall", "tags": ["chair"]},
    "000002": {"caption": "a red book on a shelf", "tags": ["book", "shelf"]},
    "000003": {"caption": "Apples on a table", "tags": ["apple"]},
    "000004": {"caption": "a blurry photo of a cup", "tags": ["cup"]},
}

# One or two rectangles per frame: (x0, y0, x1, y1, color, depth_m).
RECTS = {
    0: [(10, 12, 34, 36, (200, 60, 60), 1.2), (40, 8, 58, 30, (60, 200, 60), 1.6)],
    1: [(14, 10, 44, 40, (60, 60, 200), 1.1)],
    2: [(8, 8, 28, 28, (220, 160, 40), 1.0), (36, 20, 56, 42, (40, 160, 220), 1.4)],
    3: [(18, 14, 46, 38, (180, 40, 180), 1.3)],
    4: [(16, 12, 44, 36, (80, 200, 200), 1.2)],
}


def _make_frame(index: int, blur: bool):
    img = Image.new("RGB", (WIDTH, HEIGHT), BG)
    depth = np.full((HEIGHT, WIDTH), 2.5)
    px = img.load()
    for (x0, y0, x1, y1, color, z) in RECTS[index]:
        for y in range(y0, y1):
            for x in range(x0, x1):
                px[x, y] = color
        depth[y0:y1, x0:x1] = z
    if blur:
        img = img.filter(ImageFilter.GaussianBlur(radius=4))
    return img, depth


@pytest.fixture(scope="session")
def source_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("source")
    (root / "images").mkdir()
    (root / "depth").mkdir()
    poses = []
    for i in range(5):
        img, depth = _make_frame(i, blur=(i == 4))
        img.save(root / "images" / f"{i:06d}.png")
        units = np.round(depth / 0.001).astype("<u2")
        (root / "depth" / f"{i:06d}.bin").write_bytes(units.tobytes())
        # Camera slides along x, identity rotation.
        poses.append(
            f"1 0 0 {0.1 * i:.3f} 0 1 0 0 0 0 1 0 0 0 0 1"
        )
    (root / "poses.txt").write_text("\n".join(poses) + "\n")
    (root / "intrinsics.txt").write_text(f"60 60 {WIDTH/2} {HEIGHT/2} {WIDTH} {HEIGHT}\n")
    (root / "captions.json").write_text(json.dumps(CAPTIONS))
    return root

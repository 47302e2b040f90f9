"""Camera geometry and binary mask primitives.

Conventions used everywhere in the engine:
  * poses are camera-to-world 4x4 row-major matrices,
  * camera frame is x-right, y-down, z-forward (pinhole),
  * depth images store z-depth (distance along the optical axis), not ray length,
  * masks are row-major RLE with the first count giving the number of zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EngineError


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def validate(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise EngineError("focal lengths must be positive")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise EngineError("principal point must lie inside the image")

    def to_json(self) -> dict:
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CameraIntrinsics":
        obj = cls(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )
        obj.validate()
        return obj

    def back_project(self, u, v, z):
        """Pixel coordinates + z-depth -> points in the camera frame, (N,3)."""
        x = (np.asarray(u, dtype=np.float64) - self.cx) / self.fx * z
        y = (np.asarray(v, dtype=np.float64) - self.cy) / self.fy * z
        return np.stack([x, y, np.asarray(z, dtype=np.float64)], axis=-1)

    def project(self, points_cam: np.ndarray):
        """Camera-frame points (N,3) -> (u, v, z). Caller filters z <= 0."""
        z = points_cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = points_cam[:, 0] / z * self.fx + self.cx
            v = points_cam[:, 1] / z * self.fy + self.cy
        return u, v, z


_ORTHONORMAL_TOL = 1e-6


@dataclass(frozen=True)
class Pose:
    """Camera-to-world rigid transform. Immutable once validated."""

    matrix: np.ndarray  # (4,4) float64

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise EngineError(f"pose must be 4x4, got {m.shape}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    def validate(self) -> None:
        m = self.matrix
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=_ORTHONORMAL_TOL):
            raise EngineError("pose last row must be [0,0,0,1]")
        r = m[:3, :3]
        if not np.allclose(r.T @ r, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise EngineError("pose rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > _ORTHONORMAL_TOL:
            raise EngineError("pose rotation must have determinant +1")

    @property
    def rotation(self) -> np.ndarray:
        return self.matrix[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.matrix[:3, 3]

    def camera_to_world(self, points_cam: np.ndarray) -> np.ndarray:
        return points_cam @ self.rotation.T + self.translation

    def world_to_camera(self, points_world: np.ndarray) -> np.ndarray:
        return (points_world - self.translation) @ self.rotation

    def to_list(self) -> list:
        return [float(x) for x in self.matrix.reshape(-1)]

    @classmethod
    def from_list(cls, values) -> "Pose":
        arr = np.asarray(values, dtype=np.float64)
        if arr.size != 16:
            raise EngineError(f"pose needs 16 numbers, got {arr.size}")
        pose = cls(arr.reshape(4, 4))
        pose.validate()
        return pose


def encode_rle(array: np.ndarray) -> list:
    """Binary HxW array -> row-major run-length counts, first count = zeros."""
    flat = np.asarray(array, dtype=bool).ravel(order="C")
    if flat.size == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [flat.size]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return counts


def decode_rle(counts, width: int, height: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise EngineError("RLE counts must be non-negative")
    total = int(counts.sum())
    if total != width * height:
        raise EngineError(
            f"RLE counts sum to {total}, expected {width * height}"
        )
    values = np.arange(counts.size, dtype=np.int64) % 2
    flat = np.repeat(values, counts).astype(bool)
    return flat.reshape(height, width)


@dataclass
class Mask:
    """Run-length encoded binary mask. Decoded array is cached lazily."""

    width: int
    height: int
    rle: list
    _decoded: np.ndarray | None = field(default=None, repr=False, compare=False)

    def validate(self) -> None:
        counts = np.asarray(self.rle, dtype=np.int64)
        if counts.size and counts.min() < 0:
            raise EngineError("RLE counts must be non-negative")
        if int(counts.sum()) != self.width * self.height:
            raise EngineError("RLE counts do not cover the mask area")

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Mask":
        array = np.asarray(array, dtype=bool)
        h, w = array.shape
        return cls(width=w, height=h, rle=encode_rle(array), _decoded=array)

    def decode(self) -> np.ndarray:
        if self._decoded is None:
            self._decoded = decode_rle(self.rle, self.width, self.height)
        return self._decoded

    def area(self) -> int:
        return int(self.decode().sum())

    def is_empty(self) -> bool:
        return self.area() == 0

    def bbox(self):
        """Tight pixel-edge bbox (x_min, y_min, x_max, y_max) or None if empty."""
        arr = self.decode()
        ys, xs = np.nonzero(arr)
        if xs.size == 0:
            return None
        return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def mask_iou(a: Mask, b: Mask) -> float:
    """Pixel IoU of two masks; 0.0 when the union is empty."""
    if a.width != b.width or a.height != b.height:
        raise DimensionMismatch(
            f"mask dims differ: {a.width}x{a.height} vs {b.width}x{b.height}"
        )
    da, db = a.decode(), b.decode()
    inter = int(np.logical_and(da, db).sum())
    union = int(np.logical_or(da, db).sum())
    if union == 0:
        return 0.0
    return inter / union

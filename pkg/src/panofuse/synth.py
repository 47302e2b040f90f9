"""Deterministic synthetic RGB-D + detection corpora with exact ground truth.

Scenes are axis-aligned rooms containing boxes and spheres. Depth comes from
analytic ray casting, masks are exact silhouettes, and detections are
synthesized from the masks with configurable noise: bbox jitter, injected
near-duplicate and contained boxes (to exercise both suppression rules),
per-frame synonym cycling, blur flags with optional depth corruption.

Embeddings are synthetic: category anchors are orthonormal, and each label
is its category's anchor rotated by a fixed angle toward a label-specific
direction, so retrieval provably maps every registered label to its intended
category. Everything is a pure function of (scene spec, seed).
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset_io import (
    DEFAULT_SIZE_POLICY,
    CategoryTable,
    DatasetWriter,
    Detection,
    FrameRecord,
    UnifiedCategory,
    dump_json,
)
from .errors import SpecInvalid
from .geometry import CameraIntrinsics, Mask, Pose
from .retrieval import normalize_label, retrieve_category


def _seed_for(*parts) -> np.random.Generator:
    material = []
    for p in parts:
        if isinstance(p, str):
            digest = hashlib.sha256(p.encode("utf-8")).digest()
            material.append(int.from_bytes(digest[:8], "little"))
        else:
            material.append(int(p))
    return np.random.default_rng(material)


class SynthEmbeddingSpace:
    """Orthonormal category anchors plus per-label synonym vectors.

    A label vector is cos(theta)*anchor + sin(theta)*d with d a unit vector
    orthogonal to the anchor, so its cosine against its own anchor beats any
    other anchor whenever theta < 45 degrees.
    """

    def __init__(self, dimension: int, n_categories: int, seed: int,
                 synonym_angle_deg: float = 15.0):
        if n_categories > dimension:
            raise SpecInvalid(
                f"need dimension >= categories for orthonormal anchors "
                f"({n_categories} > {dimension})"
            )
        if not (0.0 <= synonym_angle_deg < 45.0):
            raise SpecInvalid("synonym_angle_deg must be in [0, 45)")
        self.dimension = dimension
        self.angle = math.radians(synonym_angle_deg)
        rng = _seed_for(seed, 0xA17C)
        gauss = rng.standard_normal((dimension, dimension))
        q, _ = np.linalg.qr(gauss)
        self.anchors = q.T[:n_categories].copy()  # (C, D) orthonormal rows

    def anchor(self, category_index: int) -> np.ndarray:
        return self.anchors[category_index]

    def label_vector(self, label: str, category_index: int) -> np.ndarray:
        anchor = self.anchors[category_index]
        if normalize_label(label) == "" or self.angle == 0.0:
            return anchor.copy()
        rng = _seed_for("label:" + normalize_label(label))
        d = rng.standard_normal(self.dimension)
        d -= np.dot(d, anchor) * anchor
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            return anchor.copy()
        d /= norm
        return math.cos(self.angle) * anchor + math.sin(self.angle) * d


@dataclass(frozen=True)
class CategorySpec:
    name: str
    kind: str = "thing"
    size_class: str = "Medium"
    labels: tuple = ()  # synonyms; defaults to (name,)


@dataclass(frozen=True)
class Primitive:
    shape: str  # box | sphere
    category: str
    center: np.ndarray
    size: np.ndarray | None = None  # box full extents
    radius: float | None = None
    labels: tuple = ()  # overrides the category's synonym list

    def aabb(self):
        if self.shape == "box":
            half = self.size / 2.0
            return self.center - half, self.center + half
        r = self.radius
        return self.center - r, self.center + r


@dataclass
class SceneSpec:
    room_min: np.ndarray
    room_max: np.ndarray
    categories: list
    primitives: list
    intrinsics: CameraIntrinsics
    seed: int = 0
    embedding_dim: int = 32
    synonym_angle_deg: float = 15.0
    room_detections: bool = True
    floor_category: str = "floor"
    ceiling_category: str = "ceiling"
    wall_category: str = "wall"
    gt_step: float = 0.05
    size_policy: dict = field(default_factory=lambda: dict(DEFAULT_SIZE_POLICY))

    @classmethod
    def from_json(cls, d: dict) -> "SceneSpec":
        room = d.get("room", {})
        cats = [
            CategorySpec(
                name=c["name"],
                kind=c.get("kind", "thing"),
                size_class=c.get("size_class", "Medium"),
                labels=tuple(c.get("labels", [c["name"]])),
            )
            for c in d.get("categories", [])
        ]
        prims = []
        for p in d.get("primitives", []):
            prims.append(
                Primitive(
                    shape=p["shape"],
                    category=p["category"],
                    center=np.asarray(p["center"], dtype=np.float64),
                    size=np.asarray(p["size"], dtype=np.float64) if "size" in p else None,
                    radius=float(p["radius"]) if "radius" in p else None,
                    labels=tuple(p.get("labels", [])),
                )
            )
        return cls(
            room_min=np.asarray(room.get("min", [0, 0, 0]), dtype=np.float64),
            room_max=np.asarray(room.get("max", [3, 3, 3]), dtype=np.float64),
            categories=cats,
            primitives=prims,
            intrinsics=CameraIntrinsics.from_json(
                d.get(
                    "intrinsics",
                    {"fx": 110.0, "fy": 110.0, "cx": 80.0, "cy": 60.0, "width": 160, "height": 120},
                )
            ),
            seed=int(d.get("seed", 0)),
            embedding_dim=int(d.get("embedding_dim", 32)),
            synonym_angle_deg=float(d.get("synonym_angle_deg", 15.0)),
            room_detections=bool(d.get("room_detections", True)),
            floor_category=str(d.get("floor_category", "floor")),
            ceiling_category=str(d.get("ceiling_category", "ceiling")),
            wall_category=str(d.get("wall_category", "wall")),
            gt_step=float(d.get("gt_step", 0.05)),
            size_policy=dict(d.get("size_policy", DEFAULT_SIZE_POLICY)),
        )


_ROOM_STUFF_DEFAULTS = {
    "floor": CategorySpec("floor", "stuff", "Large", ("floor",)),
    "ceiling": CategorySpec("ceiling", "stuff", "Large", ("ceiling",)),
    "wall": CategorySpec("wall", "stuff", "Large", ("wall",)),
}


class SynthScene:
    """Fully resolved scene: category table, embeddings, primitives, room."""

    def __init__(self, spec: SceneSpec):
        self.spec = spec
        self.seed = spec.seed
        self.room_min = spec.room_min
        self.room_max = spec.room_max
        self.primitives = list(spec.primitives)
        self._validate_geometry()

        cat_specs = list(spec.categories)
        have = {c.name for c in cat_specs}
        for face_cat in (spec.floor_category, spec.ceiling_category, spec.wall_category):
            if face_cat not in have:
                base = _ROOM_STUFF_DEFAULTS.get(face_cat, CategorySpec(face_cat, "stuff", "Large"))
                cat_specs.append(
                    CategorySpec(face_cat, base.kind, base.size_class, (face_cat,))
                )
                have.add(face_cat)
        for prim in self.primitives:
            if prim.category not in have:
                raise SpecInvalid(f"primitive category {prim.category!r} not declared")

        self.cat_specs = cat_specs
        self.space = SynthEmbeddingSpace(
            spec.embedding_dim, len(cat_specs), spec.seed, spec.synonym_angle_deg
        )
        self._cat_index = {c.name: i for i, c in enumerate(cat_specs)}
        self.table = CategoryTable(
            [
                UnifiedCategory(
                    id=i,
                    name=c.name,
                    kind=c.kind,
                    size_class=c.size_class,
                    embedding=self.space.anchor(i),
                )
                for i, c in enumerate(cat_specs)
            ],
            embedding_dim=spec.embedding_dim,
            size_policy=spec.size_policy,
        )
        # Labels registered per category: the category's own list plus any
        # primitive-level overrides.
        self._labels_for_prim = {}
        for pi, prim in enumerate(self.primitives):
            ci = self._cat_index[prim.category]
            labels = prim.labels or cat_specs[ci].labels or (prim.category,)
            self._labels_for_prim[pi] = tuple(labels)
        self._check_label_retrieval()

    def _validate_geometry(self) -> None:
        if not np.all(self.room_max - self.room_min > 0):
            raise SpecInvalid("room must have positive extent")
        boxes = []
        for prim in self.primitives:
            if prim.shape not in ("box", "sphere"):
                raise SpecInvalid(f"unknown shape {prim.shape!r}")
            if prim.shape == "box" and (prim.size is None or np.any(prim.size <= 0)):
                raise SpecInvalid("box needs positive size")
            if prim.shape == "sphere" and (prim.radius is None or prim.radius <= 0):
                raise SpecInvalid("sphere needs positive radius")
            lo, hi = prim.aabb()
            if np.any(lo < self.room_min - 1e-9) or np.any(hi > self.room_max + 1e-9):
                raise SpecInvalid("primitive sticks out of the room")
            boxes.append((lo, hi))
        for i in range(len(boxes)):
            for j in range(i + 1, len(boxes)):
                lo = np.maximum(boxes[i][0], boxes[j][0])
                hi = np.minimum(boxes[i][1], boxes[j][1])
                if np.all(hi - lo > 1e-9):
                    raise SpecInvalid(f"primitives {i} and {j} overlap")

    def _check_label_retrieval(self) -> None:
        for pi, labels in self._labels_for_prim.items():
            ci = self._cat_index[self.primitives[pi].category]
            for label in labels:
                vec = self.space.label_vector(label, ci)
                got, _ = retrieve_category(vec, self.table)
                if got != ci:
                    raise SpecInvalid(
                        f"label {label!r} retrieves category {got}, wanted {ci}"
                    )

    def category_index(self, name: str) -> int:
        return self._cat_index[name]

    def labels_for(self, prim_index: int) -> tuple:
        return self._labels_for_prim[prim_index]

    def label_embedding(self, label: str, category_index: int) -> np.ndarray:
        return self.space.label_vector(label, category_index)

    @property
    def n_room_faces(self) -> int:
        return 6

    def room_face_category(self, face: int) -> int:
        # Faces: 0..3 walls (x min/max, y min/max), 4 floor (z min), 5 ceiling.
        if face == 4:
            return self._cat_index[self.spec.floor_category]
        if face == 5:
            return self._cat_index[self.spec.ceiling_category]
        return self._cat_index[self.spec.wall_category]


def generate_scene(spec, seed: int | None = None) -> SynthScene:
    """Build a scene from a spec dict or SceneSpec; seed optionally overrides."""
    if isinstance(spec, dict):
        spec = SceneSpec.from_json(spec)
    if seed is not None:
        spec = SceneSpec(**{**spec.__dict__, "seed": int(seed)})
    return SynthScene(spec)


@dataclass
class NoiseProfile:
    """Knobs for detection/depth corruption; the default is perfectly clean."""

    bbox_jitter_px: float = 0.0
    depth_sigma_m: float = 0.0
    blur_rate: float = 0.0
    blur_depth_sigma_m: float = 0.0
    inject_duplicates: bool = False
    duplicate_offset_px: float = 1.0
    duplicate_conf_delta: float = 0.05
    inject_contained: bool = False
    contained_scale: float = 0.5
    contained_conf_delta: float = 0.1
    synonym_cycle: bool = False

    def validate(self, tau_coord: float = 1.5) -> None:
        if self.inject_duplicates and self.duplicate_offset_px > tau_coord:
            raise SpecInvalid("duplicate offset must stay within the corner threshold")


CLEAN = NoiseProfile()


@dataclass
class GtSegment:
    instance_id: int
    category_id: int
    mask: Mask
    bbox: tuple | None


def _ray_box(origin, dirs, bmin, bmax):
    """Slab test; returns (t_enter, t_exit) per ray with inf where missed."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs
    t1 = (bmin - origin) * inv
    t2 = (bmax - origin) * inv
    t_near = np.nanmax(np.minimum(t1, t2), axis=-1)
    t_far = np.nanmin(np.maximum(t1, t2), axis=-1)
    miss = t_far < t_near
    t_near = np.where(miss, np.inf, t_near)
    t_far = np.where(miss, -np.inf, t_far)
    return t_near, t_far


def _ray_sphere(origin, dirs, center, radius):
    oc = origin - center
    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * np.sum(dirs * oc, axis=-1)
    c = float(np.dot(oc, oc) - radius * radius)
    disc = b * b - 4 * a * c
    hit = disc >= 0
    sqrt_disc = np.sqrt(np.where(hit, disc, 0.0))
    t = (-b - sqrt_disc) / (2 * a)
    return np.where(hit & (t > 0), t, np.inf)


def render_depth(scene: SynthScene, pose: Pose):
    """Analytic z-depth and instance image for one camera pose.

    Instance ids: primitives keep their index; room faces follow at
    ``len(primitives) + face`` (0..3 walls, 4 floor, 5 ceiling).
    """
    intr = scene.spec.intrinsics
    origin = pose.translation
    if np.any(origin <= scene.room_min) or np.any(origin >= scene.room_max):
        raise SpecInvalid("camera must be inside the room")

    us, vs = np.meshgrid(np.arange(intr.width), np.arange(intr.height))
    dirs_cam = np.stack(
        [
            (us.ravel() - intr.cx) / intr.fx,
            (vs.ravel() - intr.cy) / intr.fy,
            np.ones(us.size),
        ],
        axis=1,
    )
    dirs = dirs_cam @ pose.rotation.T  # camera z == ray parameter t

    n_prims = len(scene.primitives)
    depth = np.full(us.size, np.inf)
    instance = np.full(us.size, -1, dtype=np.int64)

    # Room: camera is inside, so the exit distance is the background depth.
    _, t_exit = _ray_box(origin, dirs, scene.room_min, scene.room_max)
    exit_pts = origin + dirs * t_exit[:, None]
    face = np.zeros(us.size, dtype=np.int64)
    best = np.full(us.size, np.inf)
    for axis, (lo_face, hi_face) in enumerate(((0, 1), (2, 3), (4, 5))):
        d_lo = np.abs(exit_pts[:, axis] - scene.room_min[axis])
        d_hi = np.abs(exit_pts[:, axis] - scene.room_max[axis])
        for dist, f in ((d_lo, lo_face), (d_hi, hi_face)):
            closer = dist < best
            best = np.where(closer, dist, best)
            face = np.where(closer, f, face)
    depth = t_exit.copy()
    instance = n_prims + face

    for pi, prim in enumerate(scene.primitives):
        if prim.shape == "box":
            lo, hi = prim.aabb()
            t_near, t_far = _ray_box(origin, dirs, lo, hi)
            t = np.where((t_near > 0) & (t_near <= t_far), t_near, np.inf)
        else:
            t = _ray_sphere(origin, dirs, prim.center, prim.radius)
        closer = t < depth
        depth = np.where(closer, t, depth)
        instance = np.where(closer, pi, instance)

    h, w = intr.height, intr.width
    return depth.reshape(h, w), instance.reshape(h, w)


def _bbox_of(mask_arr):
    ys, xs = np.nonzero(mask_arr)
    if xs.size == 0:
        return None
    return (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))


def render_frame(scene: SynthScene, pose: Pose, frame_index: int = 0,
                 noise: NoiseProfile = CLEAN):
    """Render one posed observation: (FrameRecord, ground-truth segments).

    Detections are synthesized from the exact instance masks; the noise
    profile controls jitter, injected duplicates/contained boxes, synonym
    cycling, and the blur flag (with optional depth corruption on flagged
    frames).
    """
    noise.validate()
    intr = scene.spec.intrinsics
    depth, instance = render_depth(scene, pose)
    n_prims = len(scene.primitives)

    gt_segments = []
    for inst in range(n_prims + scene.n_room_faces):
        mask_arr = instance == inst
        if not mask_arr.any():
            continue
        if inst < n_prims:
            cat = scene.category_index(scene.primitives[inst].category)
        else:
            cat = scene.room_face_category(inst - n_prims)
        gt_segments.append(
            GtSegment(
                instance_id=inst,
                category_id=cat,
                mask=Mask.from_array(mask_arr),
                bbox=_bbox_of(mask_arr),
            )
        )

    rng = _seed_for(scene.seed, 0xDE7, frame_index)
    blur_rng = _seed_for(scene.seed, 0xB1, frame_index)
    blurry = bool(blur_rng.random() < noise.blur_rate)

    detections = []
    for seg in gt_segments:
        is_prim = seg.instance_id < n_prims
        if not is_prim and not scene.spec.room_detections:
            continue
        if is_prim:
            labels = scene.labels_for(seg.instance_id)
            pick = frame_index % len(labels) if noise.synonym_cycle else 0
            label = labels[pick]
        else:
            label = scene.cat_specs[seg.category_id].labels[0]
        emb = scene.label_embedding(label, seg.category_id)
        bbox = list(seg.bbox)
        if noise.bbox_jitter_px > 0:
            bbox = [b + rng.uniform(-noise.bbox_jitter_px, noise.bbox_jitter_px) for b in bbox]
        detections.append(
            Detection(
                bbox=tuple(bbox),
                confidence=0.9,
                label=label,
                embedding=emb,
                mask=seg.mask,
                from_caption=True,
            )
        )
        if not is_prim:
            continue
        if noise.inject_duplicates:
            labels = scene.labels_for(seg.instance_id)
            dup_label = labels[1 % len(labels)]
            off = noise.duplicate_offset_px
            detections.append(
                Detection(
                    bbox=tuple(b + off for b in seg.bbox),
                    confidence=0.9 - noise.duplicate_conf_delta,
                    label=dup_label,
                    embedding=scene.label_embedding(dup_label, seg.category_id),
                    mask=seg.mask,
                    from_caption=False,
                )
            )
        if noise.inject_contained:
            x0, y0, x1, y1 = seg.bbox
            cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
            hw = (x1 - x0) * noise.contained_scale / 2
            hh = (y1 - y0) * noise.contained_scale / 2
            inner = (cx - hw, cy - hh, cx + hw, cy + hh)
            sub = seg.mask.decode().copy()
            cols = np.arange(intr.width)
            rows = np.arange(intr.height)
            sub &= (cols[None, :] >= inner[0]) & (cols[None, :] < inner[2])
            sub &= (rows[:, None] >= inner[1]) & (rows[:, None] < inner[3])
            detections.append(
                Detection(
                    bbox=inner,
                    confidence=0.9 - noise.contained_conf_delta,
                    label=scene.labels_for(seg.instance_id)[0],
                    embedding=emb,
                    mask=Mask.from_array(sub),
                    from_caption=False,
                )
            )

    if noise.depth_sigma_m > 0:
        depth = depth + rng.normal(0, noise.depth_sigma_m, depth.shape)
    if blurry and noise.blur_depth_sigma_m > 0:
        corrupt_rng = _seed_for(scene.seed, 0xBAD, frame_index)
        depth = depth + corrupt_rng.normal(0, noise.blur_depth_sigma_m, depth.shape)
    depth = np.clip(depth, 0.01, 19.5)

    frame = FrameRecord(
        index=frame_index,
        rgb_path=None,
        depth_path="",
        depth_scale=0.001,
        intrinsics=intr,
        pose=pose,
        detections=detections,
        blurry=blurry,
        depth=depth,
    )
    return frame, gt_segments


# --- trajectories ------------------------------------------------------------


def look_at_pose(eye, target, up=(0.0, 0.0, 1.0)) -> Pose:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(forward, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(forward, up)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    m = np.eye(4)
    m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = right, down, forward, eye
    pose = Pose(m)
    pose.validate()
    return pose


def orbit_trajectory(target, radius: float, height: float, frames: int,
                     sweep_deg: float = 360.0, start_deg: float = 0.0):
    """Camera circles ``target`` at the given radius/height, always looking at it."""
    target = np.asarray(target, dtype=np.float64)
    poses = []
    for i in range(frames):
        ang = math.radians(start_deg + sweep_deg * i / frames)
        eye = target + np.array([radius * math.cos(ang), radius * math.sin(ang), height])
        poses.append(look_at_pose(eye, target))
    return poses


def survey_trajectory(eye, frames: int, pitch_cycle=(-0.5, 0.0, 0.55),
                      sweep_deg: float = 360.0):
    """Camera fixed at ``eye``, sweeping yaw with a repeating pitch cycle."""
    eye = np.asarray(eye, dtype=np.float64)
    poses = []
    for i in range(frames):
        yaw = math.radians(sweep_deg * i / frames)
        pitch = pitch_cycle[i % len(pitch_cycle)]
        d = np.array(
            [math.cos(yaw) * math.cos(pitch), math.sin(yaw) * math.cos(pitch), math.sin(pitch)]
        )
        poses.append(look_at_pose(eye, eye + d))
    return poses


# --- corpus writing -----------------------------------------------------------


def sample_ground_truth(scene: SynthScene, step: float | None = None):
    """Surface samples of every primitive and room face on regular grids.

    Returns (points (N,3), category_ids (N,), instance_ids (N,)).
    """
    step = step or scene.spec.gt_step
    pts, cats, insts = [], [], []

    def add(points, cat, inst):
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            return
        pts.append(points)
        cats.append(np.full(len(points), cat, dtype=np.int64))
        insts.append(np.full(len(points), inst, dtype=np.int64))

    def face_grid(lo, hi, axis, value):
        other = [a for a in range(3) if a != axis]
        g0 = np.arange(lo[other[0]], hi[other[0]] + step / 2, step)
        g1 = np.arange(lo[other[1]], hi[other[1]] + step / 2, step)
        a, b = np.meshgrid(g0, g1)
        out = np.empty((a.size, 3))
        out[:, axis] = value
        out[:, other[0]] = a.ravel()
        out[:, other[1]] = b.ravel()
        return out

    n_prims = len(scene.primitives)
    for pi, prim in enumerate(scene.primitives):
        cat = scene.category_index(prim.category)
        if prim.shape == "box":
            lo, hi = prim.aabb()
            for axis in range(3):
                add(face_grid(lo, hi, axis, lo[axis]), cat, pi)
                add(face_grid(lo, hi, axis, hi[axis]), cat, pi)
        else:
            # Fibonacci sphere at roughly one point per step^2 of area.
            n = max(16, int(4 * math.pi * prim.radius**2 / step**2))
            k = np.arange(n, dtype=np.float64)
            phi = math.pi * (3.0 - math.sqrt(5.0)) * k
            z = 1.0 - 2.0 * (k + 0.5) / n
            r = np.sqrt(1.0 - z * z)
            unit = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
            add(prim.center + prim.radius * unit, cat, pi)

    lo, hi = scene.room_min, scene.room_max
    for face, (axis, value) in enumerate(
        [(0, lo[0]), (0, hi[0]), (1, lo[1]), (1, hi[1]), (2, lo[2]), (2, hi[2])]
    ):
        add(face_grid(lo, hi, axis, value), scene.room_face_category(face), n_prims + face)

    return np.concatenate(pts), np.concatenate(cats), np.concatenate(insts)


def observed_flags(scene: SynthScene, points: np.ndarray, poses,
                   tol: float = 0.05) -> np.ndarray:
    """True for points visible (unoccluded, in frustum) in at least one pose."""
    intr = scene.spec.intrinsics
    seen = np.zeros(len(points), dtype=bool)
    for pose in poses:
        depth, _ = render_depth(scene, pose)
        cam = pose.world_to_camera(points)
        z = cam[:, 2]
        ok = z > 1e-6
        u = np.zeros(len(points), dtype=np.int64)
        v = np.zeros(len(points), dtype=np.int64)
        u[ok] = np.round(cam[ok, 0] / z[ok] * intr.fx + intr.cx).astype(np.int64)
        v[ok] = np.round(cam[ok, 1] / z[ok] * intr.fy + intr.cy).astype(np.int64)
        ok &= (u >= 0) & (u < intr.width) & (v >= 0) & (v < intr.height)
        idx = np.flatnonzero(ok)
        ok2 = np.abs(depth[v[idx], u[idx]] - z[idx]) <= tol
        seen[idx[ok2]] = True
    return seen


def make_corpus(scene: SynthScene, trajectory, noise: NoiseProfile = CLEAN,
                out_path=None, skip_frames=()) -> Path:
    """Write a complete dataset + ground-truth sidecar; returns the manifest path.

    ``skip_frames`` drops the given frame indices entirely (used to build
    manually pruned variants); remaining frames are renumbered densely while
    keeping their original render (pose, labels, noise draws).
    """
    if not trajectory:
        raise SpecInvalid("trajectory must be nonempty")
    out = Path(out_path)
    writer = DatasetWriter(
        out,
        intrinsics=scene.spec.intrinsics,
        embedding_dim=scene.spec.embedding_dim,
        size_policy=scene.spec.size_policy,
    )
    gt_dir = out / "ground_truth"
    (gt_dir / "masks").mkdir(parents=True, exist_ok=True)

    skip = set(skip_frames)
    out_index = 0
    for i, pose in enumerate(trajectory):
        if i in skip:
            continue
        frame, gt_segments = render_frame(scene, pose, frame_index=i, noise=noise)
        writer.add_frame(out_index, pose, frame.depth, frame.detections, blurry=frame.blurry)
        dump_json(
            [
                {
                    "instance_id": s.instance_id,
                    "category_id": s.category_id,
                    "bbox": list(s.bbox) if s.bbox else None,
                    "rle": [int(c) for c in s.mask.rle],
                }
                for s in gt_segments
            ],
            gt_dir / "masks" / f"{out_index:06d}.json",
        )
        out_index += 1

    points, cats, insts = sample_ground_truth(scene)
    (gt_dir / "points.bin").write_bytes(points.astype("<f4").tobytes())
    (gt_dir / "point_categories.bin").write_bytes(cats.astype("<i4").tobytes())
    (gt_dir / "point_instances.bin").write_bytes(insts.astype("<i4").tobytes())
    seen = observed_flags(scene, points, [p for i, p in enumerate(trajectory) if i not in skip])
    (gt_dir / "observed.bin").write_bytes(seen.astype(np.uint8).tobytes())

    n_prims = len(scene.primitives)
    instances = []
    for pi, prim in enumerate(scene.primitives):
        instances.append(
            {
                "instance_id": pi,
                "category_id": scene.category_index(prim.category),
                "category": prim.category,
                "shape": prim.shape,
                "labels": list(scene.labels_for(pi)),
            }
        )
    for face in range(scene.n_room_faces):
        cat = scene.room_face_category(face)
        instances.append(
            {
                "instance_id": n_prims + face,
                "category_id": cat,
                "category": scene.cat_specs[cat].name,
                "shape": "room_face",
                "labels": [scene.cat_specs[cat].name],
            }
        )
    dump_json(instances, gt_dir / "instances.json")

    return writer.write(scene.table)

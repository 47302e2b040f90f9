"""On-disk dataset contract: manifest, depth blobs, detections, category table.

The manifest decouples the fusion engine from any neural front-end: detections
arrive precomputed, with unit embeddings, RLE masks, and a caption-provenance
flag. Loading validates every declared invariant and fails loudly; the only
silent repair is re-normalizing category embeddings that are within 1e-3 of
unit length.

Depth blobs are raw uint16 little-endian rasters scaled by the manifest's
``depth.scale`` (default 0.001 m per unit); zero means invalid.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadEmbedding,
    CorruptBlob,
    DuplicateCategoryName,
    EmbeddingDimMismatch,
    EngineError,
    IndexOutOfRange,
    InvariantViolation,
    MissingField,
    SchemaVersionUnsupported,
)
from .geometry import CameraIntrinsics, Mask, Pose

SCHEMA_VERSION = 1
DEFAULT_DEPTH_SCALE = 0.001
MAX_DEPTH_M = 20.0

# Voxel size in meters per size class; Freespace only used behind a flag.
DEFAULT_SIZE_POLICY = {
    "Small": 0.02,
    "Medium": 0.03,
    "Large": 0.05,
    "Freespace": 0.30,
}

SIZE_CLASSES = ("Small", "Medium", "Large")
KINDS = ("thing", "stuff")


def _req(mapping: dict, key: str, label: str | None = None):
    if key not in mapping:
        raise MissingField(label or key)
    return mapping[key]


@dataclass(frozen=True)
class UnifiedCategory:
    id: int
    name: str
    kind: str  # thing | stuff
    size_class: str  # Small | Medium | Large
    embedding: np.ndarray  # unit vector, float64

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "kind": self.kind,
            "size_class": self.size_class,
            "embedding": [float(x) for x in self.embedding],
        }


class CategoryTable:
    """Fixed unified-category taxonomy with per-class voxel-size priors."""

    def __init__(self, categories, embedding_dim=None, size_policy=None):
        self.size_policy = dict(size_policy or DEFAULT_SIZE_POLICY)
        for k, v in self.size_policy.items():
            if v <= 0:
                raise EngineError(f"size_policy[{k}] must be positive")
        cats = list(categories)
        if not cats:
            raise EngineError("category table must not be empty")
        if embedding_dim is None:
            embedding_dim = int(cats[0].embedding.shape[0])
        self.embedding_dim = int(embedding_dim)

        names, ids = set(), set()
        for c in cats:
            if c.name in names:
                raise DuplicateCategoryName(c.name)
            names.add(c.name)
            if c.id in ids:
                raise EngineError(f"duplicate category id {c.id}")
            ids.add(c.id)
            if c.kind not in KINDS:
                raise EngineError(f"unknown kind {c.kind!r} for {c.name!r}")
            if c.size_class not in SIZE_CLASSES:
                raise EngineError(f"unknown size_class {c.size_class!r} for {c.name!r}")
            if c.embedding.shape != (self.embedding_dim,):
                raise EmbeddingDimMismatch(
                    f"category {c.name!r} has dim {c.embedding.shape[0]}, "
                    f"table declares {self.embedding_dim}"
                )

        # Deterministic iteration: ascending category id.
        self.categories = sorted(cats, key=lambda c: c.id)
        self._by_id = {c.id: c for c in self.categories}
        self._by_name = {c.name: c for c in self.categories}
        self._matrix = np.stack([c.embedding for c in self.categories])
        self._ids = np.array([c.id for c in self.categories], dtype=np.int64)

    def __len__(self):
        return len(self.categories)

    def get(self, category_id: int) -> UnifiedCategory:
        return self._by_id[category_id]

    def by_name(self, name: str) -> UnifiedCategory:
        return self._by_name[name]

    def voxel_size_for(self, size_class: str) -> float:
        return self.size_policy[size_class]

    @property
    def embedding_matrix(self) -> np.ndarray:
        """(C, D) unit rows in ascending-id order; aligned with ``ids``."""
        return self._matrix

    @property
    def ids(self) -> np.ndarray:
        return self._ids

    def to_json(self) -> list:
        return [c.to_json() for c in self.categories]


def _normalize_category_embedding(name, values, dim=None):
    vec = np.asarray(values, dtype=np.float64)
    if vec.ndim != 1:
        raise BadEmbedding(f"category {name!r}: embedding must be 1-D")
    if dim is not None and vec.shape[0] != dim:
        raise EmbeddingDimMismatch(
            f"category {name!r}: dim {vec.shape[0]} != declared {dim}"
        )
    norm = float(np.linalg.norm(vec))
    if abs(norm - 1.0) > 1e-3:
        raise BadEmbedding(f"category {name!r}: norm {norm:.6f} too far from 1")
    if abs(norm - 1.0) <= 1e-12:
        # Already unit to float precision: keep the exact stored values so
        # save/load round-trips are bit-stable.
        return vec
    return vec / norm


def parse_category_table(entries, embedding_dim=None, size_policy=None) -> CategoryTable:
    cats = []
    for entry in entries:
        name = _req(entry, "name")
        emb = _normalize_category_embedding(name, _req(entry, "embedding"), embedding_dim)
        cats.append(
            UnifiedCategory(
                id=int(_req(entry, "id")),
                name=str(name),
                kind=str(_req(entry, "kind")),
                size_class=str(_req(entry, "size_class")),
                embedding=emb,
            )
        )
    return CategoryTable(cats, embedding_dim=embedding_dim, size_policy=size_policy)


def load_category_table(path, embedding_dim=None, size_policy=None) -> CategoryTable:
    """Load a category table from its JSON array file."""
    with open(path, "r", encoding="utf-8") as f:
        entries = json.load(f)
    if not isinstance(entries, list):
        raise EngineError("category table must be a JSON array")
    return parse_category_table(entries, embedding_dim=embedding_dim, size_policy=size_policy)


@dataclass
class Detection:
    bbox: tuple  # (x_min, y_min, x_max, y_max) pixels
    confidence: float
    label: str
    embedding: np.ndarray  # near-unit vector, kept exactly as stored
    mask: Mask
    from_caption: bool = False

    def validate(self, index: int, frame_width: int, frame_height: int, dim: int) -> None:
        x0, y0, x1, y1 = self.bbox
        if not (x0 < x1 and y0 < y1):
            raise InvariantViolation(index, f"degenerate bbox {self.bbox}")
        if not (0.0 <= self.confidence <= 1.0):
            raise InvariantViolation(index, f"confidence {self.confidence} outside [0,1]")
        if self.embedding.shape != (dim,):
            raise InvariantViolation(
                index, f"embedding dim {self.embedding.shape[0]} != {dim}"
            )
        norm = float(np.linalg.norm(self.embedding))
        if abs(norm - 1.0) > 1e-4:
            raise InvariantViolation(index, f"embedding norm {norm:.6f} not unit")
        if self.mask.width != frame_width or self.mask.height != frame_height:
            raise InvariantViolation(
                index,
                f"mask {self.mask.width}x{self.mask.height} != frame "
                f"{frame_width}x{frame_height}",
            )
        try:
            self.mask.validate()
        except EngineError as exc:
            raise InvariantViolation(index, str(exc)) from exc


@dataclass
class FrameRecord:
    """One fully decoded posed RGB-D observation plus its detection set."""

    index: int
    rgb_path: str | None
    depth_path: str
    depth_scale: float
    intrinsics: CameraIntrinsics
    pose: Pose
    detections: list
    blurry: bool
    depth: np.ndarray = field(repr=False)  # (H,W) float64 meters, 0 = invalid


def filter_blurry(frames):
    """Drop frames flagged blurry; order-preserving, idempotent, pure."""
    return [f for f in frames if not f.blurry]


def decode_depth(blob: bytes, width: int, height: int, scale: float) -> np.ndarray:
    expected = 2 * width * height
    if len(blob) != expected:
        raise CorruptBlob(f"depth blob is {len(blob)} bytes, expected {expected}")
    raw = np.frombuffer(blob, dtype="<u2").astype(np.float64).reshape(height, width)
    depth = raw * scale
    finite = depth[depth > 0]
    if finite.size and float(finite.max()) > MAX_DEPTH_M:
        raise CorruptBlob(f"depth value {finite.max():.3f} m exceeds {MAX_DEPTH_M} m")
    return depth


def encode_depth(depth_m: np.ndarray, scale: float) -> bytes:
    units = np.round(np.asarray(depth_m, dtype=np.float64) / scale)
    if units.min() < 0 or units.max() > np.iinfo(np.uint16).max:
        raise EngineError("depth out of uint16 range at this scale")
    return units.astype("<u2").tobytes()


def encode_embedding_b64(vec: np.ndarray) -> str:
    return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")


def decode_embedding_b64(text: str, dim: int) -> np.ndarray:
    raw = base64.b64decode(text)
    if len(raw) != 4 * dim:
        raise CorruptBlob(f"inline embedding is {len(raw)} bytes, expected {4 * dim}")
    return np.frombuffer(raw, dtype="<f4").astype(np.float64)


class Dataset:
    """Read-only handle over a manifest. Frame blobs are loaded on demand;
    the handle itself never mutates, so frames may be loaded concurrently."""

    def __init__(self, root: Path, manifest: dict):
        self.root = Path(root)
        self.manifest = manifest
        if _req(manifest, "schema_version") != SCHEMA_VERSION:
            raise SchemaVersionUnsupported(
                f"schema_version {manifest['schema_version']} unsupported"
            )
        self.embedding_dim = int(_req(manifest, "embedding_dim"))
        depth_block = _req(manifest, "depth")
        self.depth_scale = float(_req(depth_block, "scale", "depth_scale"))
        self.depth_width = int(_req(depth_block, "width", "depth_width"))
        self.depth_height = int(_req(depth_block, "height", "depth_height"))
        self.size_policy = dict(manifest.get("size_policy", DEFAULT_SIZE_POLICY))

        table_path = self.root / _req(manifest, "category_table")
        self.category_table = load_category_table(table_path, size_policy=self.size_policy)
        if self.category_table.embedding_dim != self.embedding_dim:
            raise EmbeddingDimMismatch(
                f"manifest declares D={self.embedding_dim}, category table has "
                f"D={self.category_table.embedding_dim}"
            )

        self._frames = _req(manifest, "frames")
        declared = int(_req(manifest, "frame_count"))
        if declared != len(self._frames):
            raise EngineError(
                f"frame_count {declared} != {len(self._frames)} frame entries"
            )
        indices = [int(_req(f, "index")) for f in self._frames]
        if len(set(indices)) != len(indices):
            raise EngineError("frame indices are not unique")
        self._embedding_files: dict[str, bytes] = {}

    @property
    def frame_count(self) -> int:
        return len(self._frames)

    def blurry(self, index: int) -> bool:
        self._check_index(index)
        return bool(self._frames[index].get("blurry", False))

    def _check_index(self, index: int) -> None:
        if not (0 <= index < self.frame_count):
            raise IndexOutOfRange(f"frame {index} outside [0, {self.frame_count})")

    def _embedding_bytes(self, rel_path: str) -> bytes:
        if rel_path not in self._embedding_files:
            self._embedding_files[rel_path] = (self.root / rel_path).read_bytes()
        return self._embedding_files[rel_path]

    def _load_embedding(self, spec, det_index: int) -> np.ndarray:
        if "b64" in spec:
            return decode_embedding_b64(spec["b64"], self.embedding_dim)
        if "path" in spec:
            blob = self._embedding_bytes(spec["path"])
            offset = int(spec.get("offset", 0))
            nbytes = 4 * self.embedding_dim
            chunk = blob[offset : offset + nbytes]
            if len(chunk) != nbytes:
                raise CorruptBlob(
                    f"embedding at {spec['path']}+{offset} truncated"
                )
            return np.frombuffer(chunk, dtype="<f4").astype(np.float64)
        raise InvariantViolation(det_index, "embedding needs 'b64' or 'path'")

    def load_frame(self, index: int) -> FrameRecord:
        self._check_index(index)
        entry = self._frames[index]

        intr = CameraIntrinsics.from_json(_req(entry, "intrinsics"))
        if (intr.width, intr.height) != (self.depth_width, self.depth_height):
            raise EngineError(
                f"frame {index}: intrinsics {intr.width}x{intr.height} disagree "
                f"with manifest depth raster {self.depth_width}x{self.depth_height}"
            )
        pose = Pose.from_list(_req(entry, "pose"))

        depth_rel = _req(entry, "depth_path")
        try:
            blob = (self.root / depth_rel).read_bytes()
        except OSError as exc:
            raise CorruptBlob(f"cannot read depth blob {depth_rel}: {exc}") from exc
        depth = decode_depth(blob, intr.width, intr.height, self.depth_scale)

        detections = []
        for di, d in enumerate(_req(entry, "detections")):
            mask = Mask(
                width=intr.width,
                height=intr.height,
                rle=list(_req(d, "mask")["rle"] if isinstance(d["mask"], dict) else d["mask"]),
            )
            det = Detection(
                bbox=tuple(float(x) for x in _req(d, "bbox")),
                confidence=float(_req(d, "confidence")),
                label=str(_req(d, "label")),
                embedding=self._load_embedding(_req(d, "embedding"), di),
                mask=mask,
                from_caption=bool(d.get("from_caption", False)),
            )
            det.validate(di, intr.width, intr.height, self.embedding_dim)
            detections.append(det)

        return FrameRecord(
            index=int(entry["index"]),
            rgb_path=entry.get("rgb_path"),
            depth_path=depth_rel,
            depth_scale=self.depth_scale,
            intrinsics=intr,
            pose=pose,
            detections=detections,
            blurry=bool(entry.get("blurry", False)),
            depth=depth,
        )

    def iter_frames(self, skip_blurry: bool = False):
        for i in range(self.frame_count):
            if skip_blurry and self.blurry(i):
                continue
            yield self.load_frame(i)


def load_manifest(path) -> Dataset:
    """Open a dataset by its manifest path. Performs no frame I/O."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as f:
        manifest = json.load(f)
    return Dataset(path.parent, manifest)


# --- writer side -----------------------------------------------------------
# Used by the synthetic corpus generator and by round-trip tests. All output
# is deterministic: sorted JSON keys, explicit little-endian binary.


def detection_to_json(det: Detection, embedding_ref: dict) -> dict:
    return {
        "bbox": [float(x) for x in det.bbox],
        "confidence": float(det.confidence),
        "label": det.label,
        "from_caption": bool(det.from_caption),
        "embedding": embedding_ref,
        "mask": {"rle": [int(c) for c in det.mask.rle]},
    }


def dump_json(obj, path: Path) -> None:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    Path(path).write_text(text + "\n", encoding="utf-8")


class DatasetWriter:
    """Accumulates frames, then writes manifest + blobs under one root.

    Detection embeddings are packed into a shared ``embeddings.bin`` and
    referenced by byte offset; identical vectors are stored once.
    """

    def __init__(self, root, intrinsics: CameraIntrinsics, embedding_dim: int,
                 depth_scale: float = DEFAULT_DEPTH_SCALE, size_policy=None):
        self.root = Path(root)
        self.intrinsics = intrinsics
        self.embedding_dim = embedding_dim
        self.depth_scale = depth_scale
        self.size_policy = dict(size_policy or DEFAULT_SIZE_POLICY)
        self.frames: list[dict] = []
        self._emb_blob = bytearray()
        self._emb_offsets: dict[bytes, int] = {}

    def _embedding_ref(self, vec: np.ndarray) -> dict:
        raw = np.asarray(vec, dtype="<f4").tobytes()
        if raw not in self._emb_offsets:
            self._emb_offsets[raw] = len(self._emb_blob)
            self._emb_blob.extend(raw)
        return {"path": "embeddings.bin", "offset": self._emb_offsets[raw]}

    def add_frame(self, index: int, pose: Pose, depth_m: np.ndarray,
                  detections, blurry: bool = False) -> None:
        depth_rel = f"depth/{index:06d}.bin"
        depth_file = self.root / depth_rel
        depth_file.parent.mkdir(parents=True, exist_ok=True)
        depth_file.write_bytes(encode_depth(depth_m, self.depth_scale))
        self.frames.append(
            {
                "index": index,
                "rgb_path": None,
                "depth_path": depth_rel,
                "pose": pose.to_list(),
                "intrinsics": self.intrinsics.to_json(),
                "blurry": bool(blurry),
                "detections": [
                    detection_to_json(d, self._embedding_ref(d.embedding))
                    for d in detections
                ],
            }
        )

    def write(self, category_table: CategoryTable) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / "embeddings.bin").write_bytes(bytes(self._emb_blob))
        dump_json(category_table.to_json(), self.root / "categories.json")
        manifest = {
            "schema_version": SCHEMA_VERSION,
            "frame_count": len(self.frames),
            "embedding_dim": self.embedding_dim,
            "depth": {
                "scale": self.depth_scale,
                "width": self.intrinsics.width,
                "height": self.intrinsics.height,
            },
            "size_policy": self.size_policy,
            "category_table": "categories.json",
            "frames": self.frames,
        }
        out = self.root / "manifest.json"
        dump_json(manifest, out)
        return out

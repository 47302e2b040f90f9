"""Map persistence, surface extraction, and language-conditioned retrieval.

A map serializes to a directory: ``index.json`` carries config, the category
table, and per-submap metadata (including dynamic descriptors); each submap's
voxel data goes to its own binary block file. Serialization is canonical
(sorted keys, sorted blocks, explicit little-endian), so equal maps produce
bit-identical bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset_io import dump_json, parse_category_table
from .errors import CorruptBlob, DimensionMismatch, EmbeddingRequired, SchemaVersionUnsupported
from .fusion import (
    BLOCK_SIDE,
    BLOCK_VOXELS,
    Block,
    DynamicDescriptor,
    FusionConfig,
    PanopticMap,
    Submap,
    pack_coords,
)
from .retrieval import normalize_label

MAP_SCHEMA_VERSION = 1

_BLOCK_HEADER = struct.Struct("<3i")
_BLOCK_BYTES = _BLOCK_HEADER.size + 2 * 4 * BLOCK_VOXELS


@dataclass
class SurfacePointCloud:
    """Voxel-center surface samples with per-point provenance."""

    points: np.ndarray  # (N,3) float64 meters
    submap_ids: np.ndarray  # (N,) int64
    category_ids: np.ndarray  # (N,) int64, -1 for freespace

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def empty(cls) -> "SurfacePointCloud":
        return cls(
            points=np.zeros((0, 3)),
            submap_ids=np.zeros(0, dtype=np.int64),
            category_ids=np.zeros(0, dtype=np.int64),
        )

    @classmethod
    def concatenate(cls, clouds) -> "SurfacePointCloud":
        clouds = [c for c in clouds]
        if not clouds:
            return cls.empty()
        return cls(
            points=np.concatenate([c.points for c in clouds]),
            submap_ids=np.concatenate([c.submap_ids for c in clouds]),
            category_ids=np.concatenate([c.category_ids for c in clouds]),
        )


_LOCAL = np.stack(
    [
        np.arange(BLOCK_VOXELS) // 64,
        (np.arange(BLOCK_VOXELS) // 8) % 8,
        np.arange(BLOCK_VOXELS) % 8,
    ],
    axis=1,
)


def _extract_submap_points(submap: Submap, band: float | None) -> SurfacePointCloud:
    if band is None:
        band = 0.5 * submap.voxel_size
    if band <= 0 or not submap.blocks:
        return SurfacePointCloud.empty()

    # Flatten observed voxels in deterministic (block coord, voxel index) order.
    coords = sorted(submap.blocks)
    idx_parts, t_parts, w_parts = [], [], []
    for coord in coords:
        blk = submap.blocks[coord]
        idx_parts.append(np.asarray(coord, dtype=np.int64) * BLOCK_SIDE + _LOCAL)
        t_parts.append(np.asarray(blk.tsdf, dtype=np.float64))
        w_parts.append(np.asarray(blk.weight, dtype=np.float64))
    idx = np.concatenate(idx_parts)
    tsdf = np.concatenate(t_parts)
    observed = np.concatenate(w_parts) > 0

    # Band test alone misses surfaces fused only at oblique angles (the
    # projective distance overestimates there), so voxels adjacent to a
    # sign change between observed neighbors are emitted as well.
    emit = observed & (np.abs(tsdf) <= band)
    keys = pack_coords(idx)
    order = np.argsort(keys, kind="stable")
    sorted_keys = keys[order]
    for axis in range(3):
        step = np.zeros(3, dtype=np.int64)
        step[axis] = 1
        nkeys = pack_coords(idx + step)
        pos = np.searchsorted(sorted_keys, nkeys)
        pos = np.clip(pos, 0, sorted_keys.size - 1)
        found = sorted_keys[pos] == nkeys
        nrow = order[pos]
        crossing = found & observed & observed[nrow] & (tsdf * tsdf[nrow] < 0)
        emit |= crossing
        hit = nrow[crossing]
        emit[hit] = True

    if not emit.any():
        return SurfacePointCloud.empty()
    points = (idx[emit].astype(np.float64) + 0.5) * submap.voxel_size
    category = -1
    if submap.descriptor is not None:
        category = submap.descriptor.current_category
    n = points.shape[0]
    return SurfacePointCloud(
        points=points,
        submap_ids=np.full(n, submap.id, dtype=np.int64),
        category_ids=np.full(n, category, dtype=np.int64),
    )


def extract_points(target, band: float | None = None) -> SurfacePointCloud:
    """Surface samples of a map or a single submap.

    Emits voxel centers with weight > 0 and |tsdf| <= band (default: half a
    voxel per submap), ordered by (submap id, block coord, voxel index).
    A non-positive band yields an empty cloud.
    """
    if isinstance(target, Submap):
        return _extract_submap_points(target, band)
    return SurfacePointCloud.concatenate(
        _extract_submap_points(s, band) for s in target.submaps_in_id_order()
    )


# --- persistence ------------------------------------------------------------


def _descriptor_to_json(d: DynamicDescriptor | None):
    if d is None:
        return None
    return {
        "labels": [
            # Embeddings as plain float lists: repr round-trips exactly.
            [label, d.labels[label], [float(x) for x in d.label_embeddings[label]]]
            for label in sorted(d.labels)
        ],
        "votes": [[cid, d.category_votes[cid]] for cid in sorted(d.category_votes)],
        "current_category": d.current_category,
        "size_class": d.size_class,
    }


def _descriptor_from_json(obj, dim: int) -> DynamicDescriptor | None:
    if obj is None:
        return None
    d = DynamicDescriptor(int(obj["current_category"]), str(obj["size_class"]))
    for label, count, emb in obj["labels"]:
        if len(emb) != dim:
            raise CorruptBlob(f"label {label!r}: embedding dim {len(emb)} != {dim}")
        d.labels[label] = int(count)
        d.label_embeddings[label] = np.asarray(emb, dtype=np.float64)
    for cid, count in obj["votes"]:
        d.category_votes[int(cid)] = int(count)
    return d


def _write_blocks(submap: Submap, path: Path) -> int:
    chunks = []
    for coord in sorted(submap.blocks):
        blk = submap.blocks[coord]
        chunks.append(_BLOCK_HEADER.pack(*coord))
        chunks.append(np.asarray(blk.tsdf, dtype="<f4").tobytes())
        chunks.append(np.asarray(blk.weight, dtype="<f4").tobytes())
    path.write_bytes(b"".join(chunks))
    return len(submap.blocks)


def _read_blocks(submap: Submap, path: Path, expected: int) -> None:
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CorruptBlob(f"cannot read block file {path.name}: {exc}") from exc
    if len(raw) != expected * _BLOCK_BYTES:
        raise CorruptBlob(
            f"{path.name}: {len(raw)} bytes, expected {expected * _BLOCK_BYTES}"
        )
    for i in range(expected):
        base = i * _BLOCK_BYTES
        coord = _BLOCK_HEADER.unpack_from(raw, base)
        off = base + _BLOCK_HEADER.size
        tsdf = np.frombuffer(raw, dtype="<f4", count=BLOCK_VOXELS, offset=off).copy()
        off += 4 * BLOCK_VOXELS
        weight = np.frombuffer(raw, dtype="<f4", count=BLOCK_VOXELS, offset=off).copy()
        submap.add_block(coord, Block(tsdf=tsdf, weight=weight))


def save_map(pmap: PanopticMap, path) -> Path:
    """Serialize the map to a directory; returns the index.json path."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    submaps_json = []
    for submap in pmap.submaps_in_id_order():
        block_file = f"submap_{submap.id:06d}.bin"
        count = _write_blocks(submap, root / block_file)
        submaps_json.append(
            {
                "id": submap.id,
                "kind": submap.kind,
                "voxel_size": submap.voxel_size,
                "frames_observed": submap.frames_observed,
                "block_file": block_file,
                "block_count": count,
                "descriptor": _descriptor_to_json(submap.descriptor),
            }
        )
    index = {
        "schema_version": MAP_SCHEMA_VERSION,
        "config": pmap.config.to_json(),
        "embedding_dim": pmap.embedding_dim,
        "size_policy": pmap.categories.size_policy,
        "categories": pmap.categories.to_json(),
        "next_instance_id": pmap.next_instance_id,
        "frames_processed": pmap.frames_processed,
        "stuff_index": [[cid, sid] for cid, sid in sorted(pmap.stuff_index.items())],
        "freespace_id": pmap.freespace_id,
        "submaps": submaps_json,
    }
    out = root / "index.json"
    dump_json(index, out)
    return out


def load_map(path) -> PanopticMap:
    root = Path(path)
    with open(root / "index.json", "r", encoding="utf-8") as f:
        index = json.load(f)
    if index.get("schema_version") != MAP_SCHEMA_VERSION:
        raise SchemaVersionUnsupported(
            f"map schema {index.get('schema_version')} unsupported"
        )
    table = parse_category_table(
        index["categories"],
        embedding_dim=int(index["embedding_dim"]),
        size_policy=index["size_policy"],
    )
    pmap = PanopticMap(FusionConfig.from_json(index["config"]), table)
    pmap.next_instance_id = int(index["next_instance_id"])
    pmap.frames_processed = int(index["frames_processed"])
    pmap.stuff_index = {int(c): int(s) for c, s in index["stuff_index"]}
    pmap.freespace_id = index["freespace_id"]
    for entry in index["submaps"]:
        submap = Submap(
            submap_id=int(entry["id"]),
            kind=str(entry["kind"]),
            voxel_size=float(entry["voxel_size"]),
            descriptor=_descriptor_from_json(entry["descriptor"], table.embedding_dim),
        )
        submap.frames_observed = int(entry["frames_observed"])
        _read_blocks(submap, root / entry["block_file"], int(entry["block_count"]))
        pmap.submaps[submap.id] = submap
    return pmap


def maps_equal(a: PanopticMap, b: PanopticMap) -> bool:
    """Field-by-field equality including descriptors and voxel data."""
    if (
        a.config != b.config
        or a.next_instance_id != b.next_instance_id
        or a.frames_processed != b.frames_processed
        or a.stuff_index != b.stuff_index
        or a.freespace_id != b.freespace_id
        or sorted(a.submaps) != sorted(b.submaps)
    ):
        return False
    for sid in sorted(a.submaps):
        sa, sb = a.submaps[sid], b.submaps[sid]
        if (
            sa.kind != sb.kind
            or sa.voxel_size != sb.voxel_size
            or sa.frames_observed != sb.frames_observed
            or sorted(sa.blocks) != sorted(sb.blocks)
        ):
            return False
        for coord in sa.blocks:
            if not np.array_equal(sa.blocks[coord].tsdf, sb.blocks[coord].tsdf):
                return False
            if not np.array_equal(sa.blocks[coord].weight, sb.blocks[coord].weight):
                return False
        da, db = sa.descriptor, sb.descriptor
        if (da is None) != (db is None):
            return False
        if da is not None:
            if (
                da.labels != db.labels
                or da.category_votes != db.category_votes
                or da.current_category != db.current_category
                or da.size_class != db.size_class
            ):
                return False
            for label in da.labels:
                if not np.array_equal(da.label_embeddings[label], db.label_embeddings[label]):
                    return False
    return True


# --- retrieval --------------------------------------------------------------


@dataclass(frozen=True)
class QueryHit:
    submap_id: int
    score: float
    matched_label: str
    category: str


@dataclass
class QueryResult:
    hits: list

    def to_json_lines(self) -> str:
        return "\n".join(
            json.dumps(
                {
                    "submap_id": h.submap_id,
                    "score": h.score,
                    "matched_label": h.matched_label,
                    "category": h.category,
                },
                sort_keys=True,
            )
            for h in self.hits
        )


def query(pmap: PanopticMap, text: str, embedding=None, mode: str = "exact",
          k: int = 10) -> QueryResult:
    """Rank submaps against a language query over their dynamic descriptors.

    ``exact`` scores 1 for submaps whose accumulated labels contain the
    normalized query (misses are omitted). ``embedding`` scores each submap
    by the best cosine between the query vector and the submap's stored
    label embeddings plus its current category embedding. Read-only.
    """
    if mode not in ("exact", "embedding"):
        raise ValueError(f"unknown query mode {mode!r}")
    if mode == "embedding":
        if embedding is None:
            raise EmbeddingRequired("embedding mode needs a query vector")
        vec = np.asarray(embedding, dtype=np.float64)
        if vec.shape != (pmap.embedding_dim,):
            raise DimensionMismatch(
                f"query dim {vec.shape} != map dim {pmap.embedding_dim}"
            )
        norm = np.linalg.norm(vec)
        if norm == 0:
            raise EmbeddingRequired("query vector must be nonzero")
        vec = vec / norm

    needle = normalize_label(text)
    scored = []
    for submap in pmap.submaps_in_id_order():
        d = submap.descriptor
        if d is None or not d.labels:
            continue
        if mode == "exact":
            if needle in d.labels:
                scored.append((1.0, submap.id, needle, d.current_category))
        else:
            best_score, best_label = -np.inf, ""
            for label in sorted(d.labels):
                s = float(np.dot(vec, d.label_embeddings[label])
                          / max(np.linalg.norm(d.label_embeddings[label]), 1e-12))
                if s > best_score:
                    best_score, best_label = s, label
            cat = pmap.categories.get(d.current_category)
            cat_score = float(np.dot(vec, cat.embedding))
            if cat_score > best_score:
                best_score, best_label = cat_score, cat.name
            scored.append((best_score, submap.id, best_label, d.current_category))

    scored.sort(key=lambda t: (-t[0], t[1]))
    hits = [
        QueryHit(
            submap_id=sid,
            score=score,
            matched_label=label,
            category=pmap.categories.get(cid).name,
        )
        for score, sid, label, cid in scored[:k]
    ]
    return QueryResult(hits=hits)

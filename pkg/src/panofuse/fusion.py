"""Panoptic fusion: per-entity TSDF submaps with dynamic descriptors.

Every panoptic entity (object instance, stuff region, optionally freespace)
owns an independent sparse TSDF grid at a voxel size inherited from its
category's size prior, frozen at creation. Incoming masked detections are
associated to submaps by IoU against the submap's rendered mask; fused
observations accumulate open-vocabulary labels and category votes into a
per-object dynamic descriptor.

All iteration orders are fixed (ascending submap id, sorted voxel keys), so
identical inputs produce bit-identical maps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .dataset_io import CategoryTable, FrameRecord
from .errors import ConfigInvalid
from .geometry import CameraIntrinsics, Mask, Pose, mask_iou
from .nms import NmsConfig, _custom_nms_kept_indices
from .retrieval import ElementaryDescriptor, make_elementary_descriptor

BLOCK_SIDE = 8
BLOCK_VOXELS = BLOCK_SIDE ** 3
TRUNCATION_VOXELS = 4.0

_KEY_OFFSET = 1 << 20  # voxel/block coords must fit in signed 21 bits


def pack_coords(coords: np.ndarray) -> np.ndarray:
    """(N,3) int coords -> int64 keys, order-preserving per component."""
    c = coords.astype(np.int64) + _KEY_OFFSET
    return (c[..., 0] << 42) | (c[..., 1] << 21) | c[..., 2]


@dataclass(frozen=True)
class FusionConfig:
    xi_iou: float = 0.1  # association gate on mask IoU
    w_max: float = 64.0
    surface_band: float = 1.0  # rendering band, in multiples of voxel size
    enable_freespace: bool = False
    require_category_match: bool = True

    def validate(self) -> None:
        if not (0.0 < self.xi_iou < 1.0):
            raise ConfigInvalid("xi_iou must be in (0, 1)")
        if self.w_max < 1:
            raise ConfigInvalid("w_max must be >= 1")
        if self.surface_band <= 0:
            raise ConfigInvalid("surface_band must be positive")

    def to_json(self) -> dict:
        return {
            "xi_iou": self.xi_iou,
            "w_max": self.w_max,
            "surface_band": self.surface_band,
            "enable_freespace": self.enable_freespace,
            "require_category_match": self.require_category_match,
        }

    @classmethod
    def from_json(cls, d: dict) -> "FusionConfig":
        cfg = cls(
            xi_iou=float(d["xi_iou"]),
            w_max=float(d["w_max"]),
            surface_band=float(d["surface_band"]),
            enable_freespace=bool(d["enable_freespace"]),
            require_category_match=bool(d["require_category_match"]),
        )
        cfg.validate()
        return cfg


class DynamicDescriptor:
    """Per-object aggregate: label multiset, category votes, current category.

    The current category is the majority vote over all fused observations;
    on ties the incumbent wins, and among non-incumbent tied challengers the
    lowest category id wins. The size class always tracks the current
    category, but the owning submap's voxel size stays frozen at creation.
    """

    def __init__(self, current_category: int, size_class: str):
        self.labels: dict[str, int] = {}
        self.label_embeddings: dict[str, np.ndarray] = {}
        self.category_votes: dict[int, int] = {}
        self.current_category = current_category
        self.size_class = size_class

    def update(self, e: ElementaryDescriptor, table: CategoryTable) -> "DynamicDescriptor":
        self.labels[e.label] = self.labels.get(e.label, 0) + 1
        if e.label not in self.label_embeddings:
            self.label_embeddings[e.label] = np.asarray(e.embedding, dtype=np.float64)
        self.category_votes[e.category_id] = self.category_votes.get(e.category_id, 0) + 1

        if e.category_id != self.current_category:
            top = max(self.category_votes.values())
            if self.category_votes.get(self.current_category, 0) < top:
                winners = sorted(
                    cid for cid, n in self.category_votes.items() if n == top
                )
                self.current_category = winners[0]
        self.size_class = table.get(self.current_category).size_class
        return self

    def total_observations(self) -> int:
        return sum(self.category_votes.values())


def update_descriptor(descriptor: DynamicDescriptor, e: ElementaryDescriptor,
                      table: CategoryTable) -> DynamicDescriptor:
    """Fold one elementary descriptor into a dynamic descriptor (in place)."""
    return descriptor.update(e, table)


class Block:
    __slots__ = ("tsdf", "weight")

    def __init__(self, tsdf=None, weight=None):
        self.tsdf = tsdf if tsdf is not None else np.zeros(BLOCK_VOXELS, dtype=np.float32)
        self.weight = weight if weight is not None else np.zeros(BLOCK_VOXELS, dtype=np.float32)


def _local_linear(idx: np.ndarray) -> np.ndarray:
    lx = idx[..., 0] & (BLOCK_SIDE - 1)
    ly = idx[..., 1] & (BLOCK_SIDE - 1)
    lz = idx[..., 2] & (BLOCK_SIDE - 1)
    return (lx * BLOCK_SIDE + ly) * BLOCK_SIDE + lz


class Submap:
    """One panoptic entity: sparse TSDF grid + identity + dynamic descriptor."""

    def __init__(self, submap_id: int, kind: str, voxel_size: float,
                 descriptor: DynamicDescriptor | None):
        self.id = submap_id
        self.kind = kind  # thing | stuff | freespace
        self.voxel_size = float(voxel_size)
        self.truncation = TRUNCATION_VOXELS * self.voxel_size
        self.blocks: dict[tuple, Block] = {}
        self._by_key: dict[int, Block] = {}
        self.descriptor = descriptor
        self.frames_observed = 0

    def has_geometry(self) -> bool:
        return bool(self.blocks)

    def block_for(self, coord: tuple) -> Block:
        blk = self.blocks.get(coord)
        if blk is None:
            blk = Block()
            self.blocks[coord] = blk
            self._by_key[int(pack_coords(np.array([coord]))[0])] = blk
        return blk

    def add_block(self, coord: tuple, blk: Block) -> None:
        self.blocks[coord] = blk
        self._by_key[int(pack_coords(np.array([coord]))[0])] = blk

    def bounds(self):
        """World-space AABB over allocated blocks, or None when empty."""
        if not self.blocks:
            return None
        coords = np.array(sorted(self.blocks.keys()), dtype=np.float64)
        lo = coords.min(axis=0) * BLOCK_SIDE * self.voxel_size
        hi = (coords.max(axis=0) + 1) * BLOCK_SIDE * self.voxel_size
        return lo, hi

    def gather(self, idx: np.ndarray):
        """Voxel values at integer indices (M,3) -> (tsdf, weight); weight 0
        where nothing is allocated."""
        m = idx.shape[0]
        out_t = np.zeros(m, dtype=np.float64)
        out_w = np.zeros(m, dtype=np.float64)
        if m == 0 or not self.blocks:
            return out_t, out_w
        keys = pack_coords(idx >> 3)
        lin = _local_linear(idx)
        order = np.argsort(keys, kind="stable")
        sk = keys[order]
        uniq = np.unique(sk)
        starts = np.searchsorted(sk, uniq, side="left")
        ends = np.searchsorted(sk, uniq, side="right")
        for key, s, e in zip(uniq, starts, ends):
            blk = self._by_key.get(int(key))
            if blk is None:
                continue
            rows = order[s:e]
            sel = lin[rows]
            out_t[rows] = blk.tsdf[sel]
            out_w[rows] = blk.weight[sel]
        return out_t, out_w

    def lookup_trilinear(self, points_world: np.ndarray):
        """Interpolated TSDF at world points (N,3) -> (values, ok).

        Interpolation runs over the surrounding voxels that carry weight > 0,
        renormalized by their trilinear coefficients; a lookup succeeds where
        any observed weight supports the point. Points whose whole
        neighborhood is unallocated fail.
        """
        n = points_world.shape[0]
        if n == 0:
            return np.zeros(0), np.zeros(0, dtype=bool)
        g = points_world / self.voxel_size - 0.5
        i0 = np.floor(g).astype(np.int64)
        frac = g - i0
        acc = np.zeros(n, dtype=np.float64)
        coef_sum = np.zeros(n, dtype=np.float64)
        for corner in range(8):
            off = np.array([(corner >> 2) & 1, (corner >> 1) & 1, corner & 1])
            t, w = self.gather(i0 + off)
            wx = frac[:, 0] if off[0] else 1.0 - frac[:, 0]
            wy = frac[:, 1] if off[1] else 1.0 - frac[:, 1]
            wz = frac[:, 2] if off[2] else 1.0 - frac[:, 2]
            coef = wx * wy * wz * (w > 0)
            acc += coef * t
            coef_sum += coef
        ok = coef_sum > 1e-9
        values = np.zeros(n, dtype=np.float64)
        values[ok] = acc[ok] / coef_sum[ok]
        return values, ok


class PanopticMap:
    """The full map: submaps, stuff bookkeeping, config, category table."""

    FREESPACE_KIND = "freespace"

    def __init__(self, config: FusionConfig, categories: CategoryTable):
        config.validate()
        self.config = config
        self.categories = categories
        self.submaps: dict[int, Submap] = {}
        self.next_instance_id = 0
        self.stuff_index: dict[int, int] = {}
        self.freespace_id: int | None = None
        self.frames_processed = 0

    @property
    def embedding_dim(self) -> int:
        return self.categories.embedding_dim

    def submaps_in_id_order(self):
        return [self.submaps[i] for i in sorted(self.submaps)]

    def create_submap(self, e: ElementaryDescriptor) -> int:
        category = self.categories.get(e.category_id)
        voxel = self.categories.voxel_size_for(category.size_class)
        sid = self.next_instance_id
        self.next_instance_id += 1  # ids are never reused
        descriptor = DynamicDescriptor(e.category_id, category.size_class)
        self.submaps[sid] = Submap(sid, category.kind, voxel, descriptor)
        if category.kind == "stuff":
            self.stuff_index[e.category_id] = sid
        return sid

    def ensure_freespace(self) -> Submap:
        if self.freespace_id is None:
            sid = self.next_instance_id
            self.next_instance_id += 1
            voxel = self.categories.size_policy["Freespace"]
            self.submaps[sid] = Submap(sid, self.FREESPACE_KIND, voxel, None)
            self.freespace_id = sid
        return self.submaps[self.freespace_id]


def integrate_mask(submap: Submap, frame: FrameRecord, mask: Mask,
                   w_max: float = 64.0) -> Submap:
    """Fuse the masked depth pixels of one frame into the submap's TSDF.

    Marching each masked pixel's optical ray across one truncation band of
    the observed depth selects the candidate voxels. Each candidate is then
    updated projectively against its own image footprint: sdf is the masked
    depth at the voxel center's pixel minus the center's camera z, clamped
    to the band, folded in with the usual running average (weights saturate
    at ``w_max``). Candidates whose center falls outside the mask or onto
    invalid depth are skipped, which keeps rays near the silhouette from
    smearing signed distance into free space beside the object.
    """
    depth = frame.depth
    sel = mask.decode() & (depth > 0)
    vs, us = np.nonzero(sel)
    if us.size == 0:
        return submap

    voxel = submap.voxel_size
    trunc = submap.truncation
    intr = frame.intrinsics
    d = depth[vs, us]
    dir_x = (us.astype(np.float64) - intr.cx) / intr.fx
    dir_y = (vs.astype(np.float64) - intr.cy) / intr.fy

    step = 0.5 * voxel
    n_steps = int(round(2.0 * trunc / step)) + 1
    offsets = (np.arange(n_steps, dtype=np.float64) - (n_steps - 1) / 2.0) * step

    z = d[:, None] + offsets[None, :]  # (N,S)
    valid = z > 0
    pix = np.broadcast_to(np.arange(us.size)[:, None], z.shape)[valid]
    zf = z[valid]
    p_cam = np.stack([dir_x[pix] * zf, dir_y[pix] * zf, zf], axis=1)
    p_world = frame.pose.camera_to_world(p_cam)
    idx = np.floor(p_world / voxel).astype(np.int64)

    vox_keys = np.unique(pack_coords(idx))  # sorted candidate voxels
    coords = np.stack(
        [
            (vox_keys >> 42) & ((1 << 21) - 1),
            (vox_keys >> 21) & ((1 << 21) - 1),
            vox_keys & ((1 << 21) - 1),
        ],
        axis=1,
    ) - _KEY_OFFSET
    centers = (coords.astype(np.float64) + 0.5) * voxel
    cam = frame.pose.world_to_camera(centers)
    z_cam = cam[:, 2]
    front = z_cam > 0
    u = np.zeros(len(centers))
    v = np.zeros(len(centers))
    u[front] = cam[front, 0] / z_cam[front] * intr.fx + intr.cx
    v[front] = cam[front, 1] / z_cam[front] * intr.fy + intr.cy
    ui = np.clip(np.round(u).astype(np.int64), 0, intr.width - 1)
    vi = np.clip(np.round(v).astype(np.int64), 0, intr.height - 1)

    # A voxel straddling the silhouette can project a few pixels outside the
    # exact mask; accept it while its projection stays within its own
    # projected half-voxel of the mask. Anything farther out is left
    # untouched so rays at the silhouette cannot smear signed distance into
    # free space.
    dist_px, (near_v, near_u) = ndimage.distance_transform_edt(
        ~sel, return_indices=True
    )
    half_voxel_px = 0.5 * voxel * max(intr.fx, intr.fy) / np.maximum(z_cam, 1e-6)
    keep = front & (dist_px[vi, ui] <= half_voxel_px + 0.71)
    coords, z_cam = coords[keep], z_cam[keep]
    ui, vi = ui[keep], vi[keep]
    if coords.shape[0] == 0:
        return submap
    # Depth for the update: the masked pixel nearest in depth within the
    # voxel's projected footprint. On strongly foreshortened surfaces the
    # per-pixel depth step exceeds the voxel size, so the image-nearest
    # pixel (the EDT fallback) can be centimeters off in range.
    d_used = depth[near_v[vi, ui], near_u[vi, ui]]
    radius = min(3, int(np.ceil(half_voxel_px.max() if half_voxel_px.size else 1)))
    for du in range(-radius, radius + 1):
        for dv in range(-radius, radius + 1):
            uu = np.clip(ui + du, 0, intr.width - 1)
            vv = np.clip(vi + dv, 0, intr.height - 1)
            cand = sel[vv, uu]
            d_here = depth[vv, uu]
            better = cand & (np.abs(d_here - z_cam) < np.abs(d_used - z_cam))
            d_used[better] = d_here[better]
    sdf = np.clip(d_used - z_cam, -trunc, trunc)
    # Observations well behind the surface count for less: they may be free
    # space beside the object seen down a silhouette-edge ray, and a full
    # vote there cancels honest front-side evidence into phantom surfaces.
    eps = 0.5 * voxel
    w_obs = np.ones(len(sdf))
    behind = sdf < -eps
    w_obs[behind] = (trunc + sdf[behind]) / (trunc - eps)
    keep2 = w_obs > 1e-9
    coords, sdf, w_obs = coords[keep2], sdf[keep2], w_obs[keep2]
    if coords.shape[0] == 0:
        return submap

    # Scatter block by block; candidate order is already key-sorted.
    block_keys = pack_coords(coords >> 3)
    lin = _local_linear(coords)
    border = np.flatnonzero(np.diff(block_keys)) + 1
    starts = np.concatenate(([0], border))
    ends = np.concatenate((border, [block_keys.size]))
    for s, e in zip(starts, ends):
        coord = tuple(int(c) for c in coords[s] >> 3)
        blk = submap.block_for(coord)
        li = lin[s:e]
        w = blk.weight[li].astype(np.float64)
        t = blk.tsdf[li].astype(np.float64)
        wo = w_obs[s:e]
        blk.tsdf[li] = ((w * t + wo * sdf[s:e]) / (w + wo)).astype(np.float32)
        blk.weight[li] = np.minimum(w + wo, w_max).astype(np.float32)
    return submap


def render_submap_values(submap: Submap, intrinsics: CameraIntrinsics,
                         pose: Pose, depth: np.ndarray):
    """Per-pixel |tsdf| of the submap at the frame's observed surface.

    Returns (ok, absval): ok marks pixels whose back-projected point has a
    successful trilinear lookup; absval holds |tsdf| there and +inf elsewhere.
    """
    h, w = depth.shape
    ok_img = np.zeros((h, w), dtype=bool)
    val_img = np.full((h, w), np.inf)
    if not submap.has_geometry():
        return ok_img, val_img
    vs, us = np.nonzero(depth > 0)
    if us.size == 0:
        return ok_img, val_img
    p_cam = intrinsics.back_project(us, vs, depth[vs, us])
    p_world = pose.camera_to_world(p_cam)
    values, ok = submap.lookup_trilinear(p_world)
    ok_img[vs[ok], us[ok]] = True
    val_img[vs[ok], us[ok]] = np.abs(values[ok])
    return ok_img, val_img


def render_submap_mask(submap: Submap, intrinsics: CameraIntrinsics, pose: Pose,
                       depth: np.ndarray, band: float | None = None) -> Mask:
    """Rendered mask: pixels whose observed surface point lies within the
    submap's surface band. ``band`` defaults to one voxel size."""
    if band is None:
        band = submap.voxel_size
    ok_img, val_img = render_submap_values(submap, intrinsics, pose, depth)
    return Mask.from_array(ok_img & (val_img <= band))


def _frustum_overlaps(submap: Submap, intrinsics: CameraIntrinsics, pose: Pose) -> bool:
    """Conservative test: can any allocated block project into the image?"""
    bounds = submap.bounds()
    if bounds is None:
        return False
    lo, hi = bounds
    corners = np.array(
        [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
    )
    cam = pose.world_to_camera(corners)
    in_front = cam[:, 2] > 0
    if not in_front.any():
        return False
    u, v, _ = intrinsics.project(cam[in_front])
    if u.max() < 0 or u.min() > intrinsics.width:
        return False
    if v.max() < 0 or v.min() > intrinsics.height:
        return False
    return True


class FrameRenderCache:
    """Per-frame cache of rendered submap masks, invalidated on integration."""

    def __init__(self, frame: FrameRecord, band_voxels: float):
        self.frame = frame
        self.band_voxels = band_voxels
        self._masks: dict[int, Mask] = {}

    def rendered(self, submap: Submap) -> Mask:
        if submap.id not in self._masks:
            self._masks[submap.id] = render_submap_mask(
                submap,
                self.frame.intrinsics,
                self.frame.pose,
                self.frame.depth,
                band=self.band_voxels * submap.voxel_size,
            )
        return self._masks[submap.id]

    def invalidate(self, submap_id: int) -> None:
        self._masks.pop(submap_id, None)


def associate(mask: Mask, descriptor: ElementaryDescriptor, pmap: PanopticMap,
              frame: FrameRecord, cache: FrameRenderCache | None = None):
    """Pick the submap this observation belongs to, or None for a new one.

    Candidates are submaps with geometry intersecting the view frustum.
    Among those whose rendered-mask IoU clears the gate, a same-category
    candidate is preferred when the config asks for category matching;
    cross-category fusion still happens when no same-category candidate
    clears the gate, which is what lets category votes accumulate and flip.
    Ties break toward the lowest submap id.
    """
    cfg = pmap.config
    if cache is None:
        cache = FrameRenderCache(frame, cfg.surface_band)

    passing = []  # (submap_id, iou, same_category), ascending id
    for submap in pmap.submaps_in_id_order():
        if submap.kind == PanopticMap.FREESPACE_KIND or not submap.has_geometry():
            continue
        if not _frustum_overlaps(submap, frame.intrinsics, frame.pose):
            continue
        iou = mask_iou(mask, cache.rendered(submap))
        if iou >= cfg.xi_iou:
            same = (
                submap.descriptor is not None
                and submap.descriptor.current_category == descriptor.category_id
            )
            passing.append((submap.id, iou, same))

    if not passing:
        return None
    if cfg.require_category_match and any(same for _, _, same in passing):
        passing = [p for p in passing if p[2]]

    best_id, best_iou = passing[0][0], passing[0][1]
    for sid, iou, _ in passing[1:]:
        if iou > best_iou:
            best_id, best_iou = sid, iou
    return best_id


def process_frame(pmap: PanopticMap, frame: FrameRecord,
                  table: CategoryTable | None = None,
                  nms_cfg: NmsConfig | None = None) -> PanopticMap:
    """Fuse one frame: NMS, retrieval, association, integration, aggregation.

    Detections survive the custom NMS, then are handled in descending
    confidence order: each is associated (new submaps are created on a miss,
    with stuff categories reusing their single per-category submap),
    integrated into the winning submap's TSDF, and folded into its dynamic
    descriptor. Detections with empty masks are skipped.
    """
    table = table or pmap.categories
    cfg = pmap.config
    nms_cfg = nms_cfg or NmsConfig()

    descriptors = [make_elementary_descriptor(d, table) for d in frame.detections]
    kept = _custom_nms_kept_indices(
        frame.detections, nms_cfg, [e.category_id for e in descriptors]
    )
    order = sorted(kept, key=lambda i: (-frame.detections[i].confidence, i))

    cache = FrameRenderCache(frame, cfg.surface_band)
    fused_ids = set()
    for i in order:
        det = frame.detections[i]
        e = descriptors[i]
        if det.mask.is_empty():
            continue
        sid = associate(det.mask, e, pmap, frame, cache)
        if sid is None:
            category = table.get(e.category_id)
            if category.kind == "stuff" and e.category_id in pmap.stuff_index:
                sid = pmap.stuff_index[e.category_id]
            else:
                sid = pmap.create_submap(e)
        submap = pmap.submaps[sid]
        integrate_mask(submap, frame, det.mask, w_max=cfg.w_max)
        cache.invalidate(sid)
        update_descriptor(submap.descriptor, e, table)
        fused_ids.add(sid)

    if cfg.enable_freespace:
        free = pmap.ensure_freespace()
        everything = Mask.from_array(frame.depth > 0)
        if not everything.is_empty():
            integrate_mask(free, frame, everything, w_max=cfg.w_max)
            fused_ids.add(free.id)

    for sid in sorted(fused_ids):
        pmap.submaps[sid].frames_observed += 1
    pmap.frames_processed += 1
    return pmap

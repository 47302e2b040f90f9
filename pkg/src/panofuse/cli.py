"""Command-line entry point: fuse, eval, query, synth.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error. Logs go to
stderr; machine-readable output goes to stdout or files only, so runs stay
reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dataset_io, evaluation, fusion, map_model, synth
from .errors import ConfigInvalid, EngineError, SpecInvalid
from .geometry import Mask
from .nms import NmsConfig

log = logging.getLogger("panofuse")


@dataclass
class RunConfig:
    """One fully validated fuse invocation."""

    manifest: Path
    output: Path
    fusion: fusion.FusionConfig = field(default_factory=fusion.FusionConfig)
    nms: NmsConfig = field(default_factory=NmsConfig)
    filter_blurry: bool = True
    verbosity: int = 0


def _fusion_config(args) -> fusion.FusionConfig:
    cfg = fusion.FusionConfig(
        xi_iou=args.xi_iou,
        w_max=args.w_max,
        surface_band=args.surface_band,
        enable_freespace=args.enable_freespace,
        require_category_match=args.require_category_match,
    )
    cfg.validate()
    return cfg


def _nms_config(args) -> NmsConfig:
    cfg = NmsConfig(
        tau_coord=args.tau_coord,
        baseline_iou=args.baseline_iou,
        prefer_caption=args.prefer_caption,
    )
    cfg.validate()
    return cfg


def cmd_fuse(args) -> int:
    # Overrides are validated before any frame I/O happens.
    run = RunConfig(
        manifest=Path(args.manifest),
        output=Path(args.out),
        fusion=_fusion_config(args),
        nms=_nms_config(args),
        filter_blurry=args.filter_blurry,
        verbosity=args.verbose,
    )
    dataset = dataset_io.load_manifest(run.manifest)

    pmap = fusion.PanopticMap(run.fusion, dataset.category_table)
    t0 = time.perf_counter()
    fused = 0
    for i in range(dataset.frame_count):
        if run.filter_blurry and dataset.blurry(i):
            log.info("skipping blurry frame %d", i)
            continue
        frame = dataset.load_frame(i)
        fusion.process_frame(pmap, frame, dataset.category_table, run.nms)
        fused += 1
    elapsed = time.perf_counter() - t0

    map_model.save_map(pmap, run.output)
    fps = fused / elapsed if elapsed > 0 else float("inf")
    print(
        f"fused {fused}/{dataset.frame_count} frames into "
        f"{len(pmap.submaps)} submaps ({fps:.2f} FPS)",
        file=sys.stderr,
    )
    return 0


def _load_gt_cloud(gt_dir: Path, which: str):
    pts_file = gt_dir / "points.bin"
    if not pts_file.exists():
        raise FileNotFoundError(f"ground-truth sidecar missing: {pts_file}")
    points = np.frombuffer(pts_file.read_bytes(), dtype="<f4").reshape(-1, 3).astype(np.float64)
    cats = np.frombuffer((gt_dir / "point_categories.bin").read_bytes(), dtype="<i4").astype(np.int64)
    if which == "observed":
        seen = np.frombuffer((gt_dir / "observed.bin").read_bytes(), dtype=np.uint8).astype(bool)
        points, cats = points[seen], cats[seen]
    return points, cats


def cmd_eval_geom(args) -> int:
    pmap = map_model.load_map(args.map)
    cloud = map_model.extract_points(pmap)
    gt_dir = Path(args.manifest).parent / "ground_truth"
    g_points, g_cats = _load_gt_cloud(gt_dir, args.gt)
    report = evaluation.geometric_metrics(cloud, g_points, threshold=args.threshold)

    background = [c.id for c in pmap.categories.categories if c.kind == "stuff"]
    try:
        report.f1_detail = evaluation.f1_detail(
            cloud.points, g_points, cloud.category_ids, g_cats, background,
            threshold=args.threshold,
        )
    except EngineError:
        report.f1_detail = None

    out = Path(args.out)
    dataset_io.dump_json(report.to_json(), out)
    if args.csv:
        header, row = report.csv_row()
        print(header)
        print(row)
    else:
        print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def _segments_from_sidecar(path: Path, width: int, height: int):
    with open(path, "r", encoding="utf-8") as f:
        entries = json.load(f)
    return [
        evaluation.Segment(
            category_id=int(e["category_id"]),
            mask=Mask(width=width, height=height, rle=e["rle"]).decode(),
        )
        for e in entries
    ]


def _render_panoptic_segments(pmap, frame):
    """Assemble disjoint per-submap segments: every covered pixel goes to the
    submap with the smallest |tsdf| at its surface point."""
    h, w = frame.depth.shape
    best_val = np.full((h, w), np.inf)
    best_sub = np.full((h, w), -1, dtype=np.int64)
    for submap in pmap.submaps_in_id_order():
        if submap.descriptor is None or not submap.has_geometry():
            continue
        ok, val = fusion.render_submap_values(
            submap, frame.intrinsics, frame.pose, frame.depth
        )
        band = pmap.config.surface_band * submap.voxel_size
        cover = ok & (val <= band) & (val < best_val)
        best_val[cover] = val[cover]
        best_sub[cover] = submap.id
    segments = []
    for sid in sorted(set(best_sub[best_sub >= 0].tolist())):
        seg_mask = best_sub == sid
        segments.append(
            evaluation.Segment(
                category_id=pmap.submaps[sid].descriptor.current_category,
                mask=seg_mask,
            )
        )
    return segments


def cmd_eval_panoptic(args) -> int:
    dataset = dataset_io.load_manifest(args.manifest)
    gt_masks_dir = Path(args.manifest).parent / "ground_truth" / "masks"
    if not gt_masks_dir.exists():
        raise FileNotFoundError(f"ground-truth sidecar missing: {gt_masks_dir}")
    pred_dir = Path(args.pred) / "masks" if args.pred else None
    pmap = map_model.load_map(args.map) if args.map else None
    if pmap is None and pred_dir is None:
        raise ConfigInvalid("eval panoptic needs --map or --pred")

    agg = evaluation.PanopticAggregator()
    ap_preds, ap_gts = [], []
    for i in range(dataset.frame_count):
        w, h = dataset.depth_width, dataset.depth_height
        gt_segments = _segments_from_sidecar(gt_masks_dir / f"{i:06d}.json", w, h)
        if pred_dir is not None:
            pred_segments = _segments_from_sidecar(pred_dir / f"{i:06d}.json", w, h)
        else:
            frame = dataset.load_frame(i)
            pred_segments = _render_panoptic_segments(pmap, frame)
        agg.update(pred_segments, gt_segments)
        for seg in pred_segments:
            ys, xs = np.nonzero(seg.mask)
            if xs.size == 0:
                continue
            box = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
            ap_preds.append(evaluation.ScoredBox(box, 1.0, seg.category_id, frame=i))
        for seg in gt_segments:
            ys, xs = np.nonzero(seg.mask)
            if xs.size == 0:
                continue
            box = (float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1))
            ap_gts.append(evaluation.GtBox(box, seg.category_id, frame=i))

    report = agg.report()
    report.map_at = evaluation.mean_ap(ap_preds, ap_gts, (0.3, 0.4, 0.5))
    dataset_io.dump_json(report.to_json(), Path(args.out))
    if args.csv:
        header, row = report.csv_row()
        print(header)
        print(row)
    else:
        print(json.dumps(report.to_json(), sort_keys=True))
    return 0


def cmd_query(args) -> int:
    pmap = map_model.load_map(args.map)
    embedding = None
    if args.mode == "embedding":
        if not args.embedding_file:
            raise ConfigInvalid("embedding mode requires --embedding-file")
        raw = Path(args.embedding_file).read_bytes()
        embedding = np.frombuffer(raw, dtype="<f4").astype(np.float64)
    result = map_model.query(pmap, args.text, embedding=embedding, mode=args.mode, k=args.k)
    text = result.to_json_lines()
    if text:
        print(text)
    return 0


def cmd_synth(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as f:
        spec = json.load(f)
    scene = synth.generate_scene(spec, seed=args.seed)

    traj_spec = spec.get("trajectory")
    if traj_spec is None:
        raise ConfigInvalid("scene spec needs a 'trajectory' block")
    if isinstance(traj_spec, list):
        trajectory = [synth.Pose.from_list(p) for p in traj_spec]
    elif traj_spec.get("type") == "orbit":
        trajectory = synth.orbit_trajectory(
            traj_spec["target"],
            float(traj_spec["radius"]),
            float(traj_spec.get("height", 0.5)),
            int(traj_spec["frames"]),
            sweep_deg=float(traj_spec.get("sweep_deg", 360.0)),
        )
    elif traj_spec.get("type") == "survey":
        trajectory = synth.survey_trajectory(
            traj_spec["eye"],
            int(traj_spec["frames"]),
            pitch_cycle=tuple(traj_spec.get("pitch_cycle", (-0.5, 0.0, 0.55))),
            sweep_deg=float(traj_spec.get("sweep_deg", 360.0)),
        )
    else:
        raise ConfigInvalid(f"unknown trajectory type {traj_spec.get('type')!r}")

    noise = synth.NoiseProfile(**spec.get("noise", {}))
    manifest = synth.make_corpus(scene, trajectory, noise, args.out)
    print(f"wrote corpus: {manifest}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="panofuse")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p_fuse = sub.add_parser("fuse", help="fuse a dataset into a panoptic map")
    p_fuse.add_argument("--manifest", required=True)
    p_fuse.add_argument("--out", required=True)
    p_fuse.add_argument("--xi-iou", type=float, default=0.1)
    p_fuse.add_argument("--w-max", type=float, default=64.0)
    p_fuse.add_argument("--surface-band", type=float, default=1.0)
    p_fuse.add_argument("--enable-freespace", action="store_true")
    p_fuse.add_argument(
        "--no-require-category-match", dest="require_category_match",
        action="store_false", default=True,
    )
    p_fuse.add_argument("--tau-coord", type=float, default=1.5)
    p_fuse.add_argument("--baseline-iou", type=float, default=0.5)
    p_fuse.add_argument(
        "--no-prefer-caption", dest="prefer_caption", action="store_false", default=True
    )
    p_fuse.add_argument(
        "--no-filter-blurry", dest="filter_blurry", action="store_false", default=True
    )
    p_fuse.set_defaults(func=cmd_fuse)

    p_eval = sub.add_parser("eval", help="evaluate a fused map")
    eval_sub = p_eval.add_subparsers(dest="eval_command", required=True)

    p_geom = eval_sub.add_parser("geom", help="geometric metrics vs ground truth")
    p_geom.add_argument("--map", required=True)
    p_geom.add_argument("--manifest", required=True)
    p_geom.add_argument("--out", default="report.json")
    p_geom.add_argument("--threshold", type=float, default=0.05)
    p_geom.add_argument("--gt", choices=("observed", "full"), default="observed")
    p_geom.add_argument("--csv", action="store_true")
    p_geom.set_defaults(func=cmd_eval_geom)

    p_pan = eval_sub.add_parser("panoptic", help="panoptic quality vs ground truth")
    p_pan.add_argument("--map")
    p_pan.add_argument("--manifest", required=True)
    p_pan.add_argument("--pred", help="read predictions from a sidecar-format dir")
    p_pan.add_argument("--out", default="report.json")
    p_pan.add_argument("--csv", action="store_true")
    p_pan.set_defaults(func=cmd_eval_panoptic)

    p_query = sub.add_parser("query", help="language-conditioned retrieval")
    p_query.add_argument("--map", required=True)
    p_query.add_argument("--text", required=True)
    p_query.add_argument("--mode", choices=("exact", "embedding"), default="exact")
    p_query.add_argument("--embedding-file", help="raw float32 LE query vector")
    p_query.add_argument("--k", type=int, default=10)
    p_query.set_defaults(func=cmd_query)

    p_synth = sub.add_parser("synth", help="generate a synthetic corpus")
    p_synth.add_argument("--spec", required=True)
    p_synth.add_argument("--out", required=True)
    p_synth.add_argument("--seed", type=int, default=None)
    p_synth.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(stream=sys.stderr, level=level, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigInvalid, SpecInvalid, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

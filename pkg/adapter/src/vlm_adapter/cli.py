"""Command line: convert a raw RGB-D sequence into an engine dataset."""

from __future__ import annotations

import argparse
import sys

from .config import AdapterConfig, AdapterError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlm-adapter")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("convert", help="convert a source sequence to a dataset")
    p.add_argument("--source", required=True, help="images/, depth/, poses.txt, intrinsics.txt")
    p.add_argument("--out", required=True)
    p.add_argument("--model", choices=("mock", "real"), default="mock")
    p.add_argument("--use-tags", action="store_true")
    p.add_argument("--box-threshold", type=float, default=0.35)
    p.add_argument("--text-threshold", type=float, default=0.25)
    p.add_argument("--embedding-dim", type=int, default=768)
    p.add_argument("--embedding-model", default="hash-768")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    cfg = AdapterConfig(
        model=args.model,
        box_threshold=args.box_threshold,
        text_threshold=args.text_threshold,
        use_tags=args.use_tags,
        embedding_model=args.embedding_model,
        embedding_dim=args.embedding_dim,
    )
    try:
        cfg.validate()
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    from .pipeline import convert

    try:
        manifest = convert(args.source, args.out, cfg)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"wrote {manifest}", file=sys.stderr)
    return 0


if __name__ == "__main__":
    sys.exit(main())

"""featexport command line: `features` and `text-bank` subcommands."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .export import ExportConfig, export_features, export_text_bank, parse_image_manifest


def load_config(path) -> ExportConfig:
    doc = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
    known = set(ExportConfig.__dataclass_fields__)
    kwargs = {k: v for k, v in doc.items() if k in known}
    if "stage_boundaries" in kwargs:
        kwargs["stage_boundaries"] = tuple(kwargs["stage_boundaries"])
    return ExportConfig(**kwargs)


def cmd_features(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.output_root = args.out
    images_path = Path(args.images)
    doc = json.loads(images_path.read_text(encoding="utf-8"))
    entries = parse_image_manifest(doc, images_path.parent)
    result = export_features(cfg, entries, doc.get("dataset_name", "export"))
    print(
        f"exported {result.n_samples} samples (d={result.feature_dim}, "
        f"{result.projection}) -> {result.manifest_path}"
    )
    return 0


def cmd_text_bank(args) -> int:
    cfg = load_config(args.config)
    if args.out:
        cfg.output_root = str(Path(args.out).parent)
    result = export_text_bank(cfg, path=args.out or None)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"wrote text bank (d={result.feature_dim}) -> {result.text_bank_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="featexport",
        description="Export encoder patch-feature grids and prompt text banks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("features", help="export CMFG/CMSK files plus a manifest")
    p.add_argument("--config", help="ExportConfig JSON (defaults if omitted)")
    p.add_argument("--images", required=True, help="image manifest JSON")
    p.add_argument("--out", help="output root (overrides config output_root)")
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("text-bank", help="export the CMTX prompt bank")
    p.add_argument("--config", help="ExportConfig JSON (defaults if omitted)")
    p.add_argument("--out", help="output file path")
    p.set_defaults(func=cmd_text_bank)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()

"""Command-line entry point: ``adet propose | augment | fuse | evaluate | bench``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import defaultdict
from pathlib import Path
from typing import Any, Sequence

from adet.asoe import SubRegion
from adet.config import ConfigError, PipelineConfig, load_config
from adet.core import Detection
from adet.evaluation import EvaluationError, evaluate
from adet.fusion import fuse
from adet.heatmap import HeatmapFormatError, read_adhm
from adet.io import (
    SchemaError,
    detections_from_records,
    load_coco,
    load_detections,
    read_image,
    read_jsonl,
    save_detections,
    write_json,
    write_jsonl,
)
from adet.pipeline import build_fine_training_set, propose, run_benchmark, save_fine_training_set, write_benchmark

log = logging.getLogger("adet")


class CommandError(Exception):
    pass


def _overrides(args: argparse.Namespace, mapping: dict[str, tuple[str, str]]) -> dict[str, Any]:
    out: dict[str, dict[str, Any]] = {}
    for attr, (section, key) in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out.setdefault(section, {})[key] = value
    return out


def _config(args: argparse.Namespace, mapping: dict[str, tuple[str, str]]) -> PipelineConfig:
    return load_config(args.config, _overrides(args, mapping))


def cmd_propose(args: argparse.Namespace) -> int:
    cfg = _config(
        args,
        {"gamma": ("asoe", "gamma"), "n": ("asoe", "n"), "layer": ("asoe", "layer"), "seed": ("asoe", "seed")},
    )
    files = sorted(Path(args.heatmaps).glob("*.adhm")) if Path(args.heatmaps).is_dir() else None
    if files is None:
        raise CommandError(f"heatmap directory not found: {args.heatmaps}")
    tensors = [read_adhm(f) for f in files]
    images = None
    if args.ann:
        ds = load_coco(args.ann)
        images = {im.id: im for im in ds.images}
    regions = propose(tensors, cfg.asoe, images)
    write_jsonl((r.to_json() for r in regions), args.out)
    print(f"{len(files)} heatmaps, {len(regions)} subregions -> {args.out}")
    return 0


def cmd_augment(args: argparse.Namespace) -> int:
    cfg = _config(args, {"budget": ("dcc", "budget"), "seed": ("dcc", "seed")})
    root = Path(args.dataset)
    ds = load_coco(root / "annotations.json")
    regions = [SubRegion.from_json(r) for r in read_jsonl(args.manifest)]
    needed = sorted({r.image_id for r in regions})
    unknown = [i for i in needed if not ds.has_image(i)]
    if unknown:
        raise CommandError(f"manifest references unknown images: {unknown}")
    missing = [str(root / ds.image(i).file_path) for i in needed if not (root / ds.image(i).file_path).is_file()]
    if missing:
        raise CommandError("missing image files:\n  " + "\n  ".join(missing))
    fts = build_fine_training_set(ds, regions, lambda i: read_image(root / ds.image(i).file_path), cfg.dcc)
    save_fine_training_set(fts, args.out)
    print(fts.count_table())
    print(f"{len(fts.dataset.images)} subregion images -> {args.out}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    cfg = _config(args, {"nms_iou": ("fusion", "nms_iou"), "max_detections": ("fusion", "max_detections")})
    regions = [SubRegion.from_json(r) for r in read_jsonl(args.manifest)]
    coarse = detections_from_records(load_detections(args.coarse))
    fine_recs = load_detections(args.fine)
    images = {im.id: im for im in load_coco(args.ann).images} if args.ann else {}

    coarse_by: dict[int, list[Detection]] = defaultdict(list)
    for d in coarse:
        coarse_by[d.image_id].append(d)
    fine_by: dict[int, dict[int, list[Detection]]] = defaultdict(lambda: defaultdict(list))
    for i, rec in enumerate(fine_recs):
        idx = rec.get("region")
        if not isinstance(idx, int) or not 0 <= idx < len(regions):
            raise SchemaError(f"[{i}].region", f"expected a manifest index in [0, {len(regions)})")
        region = regions[idx]
        fine_by[region.image_id][idx].append(Detection.from_json({**rec, "image_id": region.image_id}))

    out: list[Detection] = []
    for image_id in sorted(set(coarse_by) | set(fine_by)):
        per_region = [(regions[k], v) for k, v in sorted(fine_by[image_id].items())]
        out.extend(fuse(coarse_by[image_id], per_region, cfg.fusion, images.get(image_id)))
    save_detections(out, args.out)
    print(f"{len(coarse)} coarse + {len(fine_recs)} fine -> {len(out)} fused detections -> {args.out}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    cfg = _config(args, {"max_detections": ("eval", "max_detections")})
    ds = load_coco(args.ann)
    dets = detections_from_records(load_detections(args.dets))
    report = evaluate(dets, ds, cfg.eval.max_detections)
    print(report.table(Path(args.dets).stem))
    if args.json:
        write_json(report.to_json(), args.json)
    else:
        print(json.dumps(report.to_json(), indent=1))
    return 0


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _config(
        args,
        {
            "seed": ("bench", "seed"),
            "n_scenes": ("bench", "n_scenes"),
            "gamma": ("asoe", "gamma"),
            "n": ("asoe", "n"),
        },
    )
    res = run_benchmark(cfg)
    write_benchmark(res, args.out)
    print(res.table())
    delta = res.summary["delta"]
    print("delta (fused - coarse): " + "  ".join(
        f"{k}={'-' if v is None else f'{100 * v:+.1f}'}" for k, v in delta.items()
    ))
    print(f"subregions: {res.summary['n_subregions']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="adet", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("propose", help="heatmaps -> subregion manifest (JSON lines)")
    sp.add_argument("--heatmaps", required=True, help="directory of .adhm files")
    sp.add_argument("--out", required=True)
    sp.add_argument("--ann", help="COCO file giving true image sizes")
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--n", type=int)
    sp.add_argument("--layer", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_propose)

    sp = sub.add_parser("augment", help="crop subregions and copy-paste tail classes")
    sp.add_argument("--dataset", required=True, help="directory holding annotations.json and images")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--budget", type=int)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_augment)

    sp = sub.add_parser("fuse", help="merge coarse and fine detections with NMS")
    sp.add_argument("--coarse", required=True)
    sp.add_argument("--fine", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--ann", help="COCO file giving image bounds for clamping")
    sp.add_argument("--nms-iou", dest="nms_iou", type=float)
    sp.add_argument("--max-detections", dest="max_detections", type=int)
    sp.set_defaults(func=cmd_fuse)

    sp = sub.add_parser("evaluate", help="COCO-style AP of a detection file")
    sp.add_argument("--dets", required=True)
    sp.add_argument("--ann", required=True)
    sp.add_argument("--json", help="write the report here instead of stdout")
    sp.add_argument("--max-detections", dest="max_detections", type=int)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("bench", help="synthetic coarse vs coarse+fine benchmark")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n-scenes", dest="n_scenes", type=int)
    sp.add_argument("--gamma", type=float)
    sp.add_argument("--n", type=int)
    sp.set_defaults(func=cmd_bench)

    for sp in sub.choices.values():
        sp.add_argument("--config", help="YAML or JSON config file")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (HeatmapFormatError, SchemaError, ConfigError, EvaluationError, CommandError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

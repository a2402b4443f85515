"""Dataset-level drivers: proposal over many images, fine training set generation,
and the synthetic coarse-vs-fused benchmark."""

from __future__ import annotations

import os
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, TypeVar

import cv2
import numpy as np

from adet.asoe import AsoeConfig, SubRegion, generate_subregions
from adet.config import PipelineConfig, to_dict
from adet.core import Annotation, DatasetIndex, Detection, ImageRecord
from adet.dcc import (
    AugmentedRegion,
    DccConfig,
    MemoryBank,
    augment_region,
    enqueue_region_instances,
    region_seed,
    tail_ids,
)
from adet.evaluation import EvalReport, evaluate, format_table
from adet.fusion import fuse
from adet.heatmap import ActivationTensor, write_adhm
from adet.io import save_coco, save_detections, write_image, write_json, write_jsonl
from adet.sim import Scene, generate_scene, mock_detect, scene_seed, scenes_to_dataset

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    env = os.environ.get("ADET_THREADS")
    if env:
        return max(1, int(env))
    return max(1, min(8, os.cpu_count() or 1))


def parallel_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """Order-preserving map over a bounded thread pool (``ADET_THREADS``)."""
    items = list(items)
    n = worker_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def propose(
    tensors: Sequence[ActivationTensor],
    cfg: AsoeConfig = AsoeConfig(),
    images: Mapping[int, ImageRecord] | None = None,
) -> list[SubRegion]:
    """Subregions for every tensor at the configured pyramid level, in input order."""
    chosen = [t for t in tensors if t.layer == cfg.layer]

    def one(t: ActivationTensor) -> list[SubRegion]:
        img = images.get(t.image_id) if images else None
        return generate_subregions(t, cfg, img)

    return [r for rs in parallel_map(one, chosen) for r in rs]


def fine_stage_area(regions: Iterable[SubRegion]) -> float:
    """Pixels the fine detector processes: every subregion at its upscaled size."""
    return float(sum(r.rect.w * r.rect.h * r.scale**2 for r in regions))


@dataclass(eq=False)
class FineTrainingSet:
    dataset: DatasetIndex
    pixels: dict[int, np.ndarray]
    regions: list[AugmentedRegion]
    counts_before: dict[int, int]
    counts_after: dict[int, int]

    def count_table(self) -> str:
        names = {c.id: c.name for c in self.dataset.categories}
        lines = [f"{'class':<18}{'tail':>6}{'before':>8}{'after':>8}"]
        tails = {c.id for c in self.dataset.categories if c.is_tail}
        for cid in sorted(self.counts_before):
            lines.append(
                f"{names.get(cid, str(cid)):<18}{'yes' if cid in tails else '':>6}"
                f"{self.counts_before[cid]:>8}{self.counts_after[cid]:>8}"
            )
        return "\n".join(lines)


def build_fine_training_set(
    dataset: DatasetIndex,
    regions: Sequence[SubRegion],
    get_pixels: Callable[[int], np.ndarray],
    cfg: DccConfig = DccConfig(),
) -> FineTrainingSet:
    """Crop every subregion and copy-paste tail instances into it.

    Images are visited by ascending id and regions by cluster id, so the
    FIFO banks see a fixed traversal. Each crop becomes one image of the
    output dataset with renumbered ids; cropped ground truth records its
    ``orig_annotation_id`` and pasted objects carry their provenance.
    """
    tails = tail_ids(dataset, cfg.tail_classes)
    if cfg.tail_classes is not None:
        dataset = dataset.with_tail_classes(tails)
    bank = MemoryBank(tails, cfg.capacity)
    by_image: dict[int, list[SubRegion]] = defaultdict(list)
    for r in regions:
        by_image[r.image_id].append(r)

    images: list[ImageRecord] = []
    anns: list[Annotation] = []
    pixels: dict[int, np.ndarray] = {}
    done: list[AugmentedRegion] = []
    before = {c.id: 0 for c in dataset.categories}
    after = dict(before)
    next_img, next_ann = 1, 1
    for image_id in sorted(by_image):
        src = get_pixels(image_id)
        for region in sorted(by_image[image_id], key=lambda r: r.cluster_id):
            enqueue_region_instances(bank, region, dataset, src, cfg.expand)
            aug = augment_region(
                region, dataset, bank, src,
                budget=cfg.budget,
                seed=region_seed(cfg.seed, image_id, region.cluster_id),
                augment=cfg.augment,
                image_id=next_img,
            )
            x0, y0, w, h = aug.window
            images.append(
                ImageRecord(
                    next_img, w, h, f"images/{image_id:06d}_r{region.cluster_id}.png",
                    extra={
                        "source_image_id": image_id,
                        "cluster_id": region.cluster_id,
                        "window": [x0, y0, w, h],
                    },
                )
            )
            for a in aug.annotations:
                pasted = "paste_position" in a.extra
                extra = dict(a.extra) if pasted else {**a.extra, "orig_annotation_id": a.id}
                anns.append(Annotation(next_ann, a.bbox, a.category_id, next_img, extra))
                next_ann += 1
                after[a.category_id] = after.get(a.category_id, 0) + 1
                if not pasted:
                    before[a.category_id] = before.get(a.category_id, 0) + 1
            pixels[next_img] = aug.pixels
            done.append(aug)
            next_img += 1
    out = DatasetIndex(images, anns, list(dataset.categories), {"info": {"kind": "fine-grained training set"}})
    return FineTrainingSet(out, pixels, done, before, after)


def save_fine_training_set(fts: FineTrainingSet, out_dir: str | os.PathLike) -> None:
    out_dir = Path(out_dir)
    for img in fts.dataset.images:
        write_image(fts.pixels[img.id], out_dir / img.file_path)
    save_coco(fts.dataset, out_dir / "annotations.json")


def draw_overlay(
    pixels: np.ndarray,
    gt: Iterable[Annotation] = (),
    regions: Iterable[SubRegion] = (),
    dets: Iterable[Detection] = (),
) -> np.ndarray:
    """Boxes over an RGB image: ground truth green, subregions yellow, detections red."""
    img = np.ascontiguousarray(pixels.copy())

    def rect(b, color, t):
        p1 = (int(round(b.x)), int(round(b.y)))
        p2 = (int(round(b.x2)) - 1, int(round(b.y2)) - 1)
        cv2.rectangle(img, p1, p2, color, t)

    for a in gt:
        rect(a.bbox, (0, 255, 0), 1)
    for d in dets:
        rect(d.bbox, (255, 0, 0), 1)
    for r in regions:
        rect(r.rect, (255, 255, 0), 2)
    return img


@dataclass(eq=False)
class BenchResult:
    config: PipelineConfig
    scenes: list[Scene]
    dataset: DatasetIndex
    regions: list[SubRegion]
    coarse: list[Detection]
    fine: list[tuple[int, Detection]]  # (manifest index, detection in resized frame)
    fused: list[Detection]
    coarse_report: EvalReport
    fused_report: EvalReport
    fine_set: FineTrainingSet | None
    summary: dict[str, Any] = field(default_factory=dict)

    def table(self) -> str:
        return format_table([("coarse", self.coarse_report), ("coarse+fine", self.fused_report)])


def make_scenes(cfg: PipelineConfig) -> list[Scene]:
    b = cfg.bench
    jobs = [(i, scene_seed(b.seed, i)) for i in range(1, b.n_scenes + 1)]
    return parallel_map(
        lambda job: generate_scene(replace(b.scene, seed=job[1]), job[0], f"images/{job[0]:06d}.png"),
        jobs,
    )


def run_benchmark(
    cfg: PipelineConfig = PipelineConfig(),
    scenes: Sequence[Scene] | None = None,
    with_dcc: bool = True,
) -> BenchResult:
    """Coarse-only vs coarse+fine arms of the mock detector on seeded scenes."""
    scenes = list(scenes) if scenes is not None else make_scenes(cfg)
    dataset = scenes_to_dataset(scenes, cfg.bench.scene)
    det_cfg = cfg.bench.detector
    asoe_cfg = replace(cfg.asoe, layer=cfg.bench.scene.layer)

    def per_scene(s: Scene):
        regions = generate_subregions(s.tensor, asoe_cfg, s.image)
        coarse = mock_detect(s, None, det_cfg)
        fine = [(r, mock_detect(s, r, det_cfg)) for r in regions]
        fused = fuse(coarse, fine, cfg.fusion, s.image)
        coarse_only = fuse(coarse, [], cfg.fusion, s.image)
        return regions, coarse, coarse_only, fine, fused

    results = parallel_map(per_scene, scenes)
    regions: list[SubRegion] = []
    coarse_raw: list[Detection] = []
    coarse_final: list[Detection] = []
    fine_raw: list[tuple[int, Detection]] = []
    fused: list[Detection] = []
    for rs, c, co, fine, fu in results:
        for r, dets in fine:
            idx = len(regions)
            regions.append(r)
            fine_raw.extend((idx, d) for d in dets)
        coarse_raw.extend(c)
        coarse_final.extend(co)
        fused.extend(fu)

    max_det = cfg.eval.max_detections
    coarse_report = evaluate(coarse_final, dataset, max_det)
    fused_report = evaluate(fused, dataset, max_det)

    fine_set = None
    if with_dcc:
        by_id = {s.image.id: s.pixels for s in scenes}
        fine_set = build_fine_training_set(dataset, regions, by_id.__getitem__, cfg.dcc)

    summary: dict[str, Any] = {
        "n_scenes": len(scenes),
        "n_objects": len(dataset.annotations),
        "dropped_objects": sum(s.dropped for s in scenes),
        "n_subregions": len(regions),
        "fine_stage_area": fine_stage_area(regions),
        "coarse": coarse_report.to_json(),
        "fused": fused_report.to_json(),
        "delta": {
            k: (None if getattr(fused_report, k) is None or getattr(coarse_report, k) is None
                else getattr(fused_report, k) - getattr(coarse_report, k))
            for k in ("ap", "ap_50", "ap_75", "ap_s", "ap_m", "ap_l")
        },
    }
    if fine_set is not None:
        summary["dcc"] = {
            "pastes": sum(len(r.pastes) for r in fine_set.regions),
            "counts_before": {str(k): v for k, v in fine_set.counts_before.items()},
            "counts_after": {str(k): v for k, v in fine_set.counts_after.items()},
        }
    return BenchResult(
        cfg, scenes, dataset, regions, coarse_raw, fine_raw, fused,
        coarse_report, fused_report, fine_set, summary,
    )


def write_benchmark(res: BenchResult, out_dir: str | os.PathLike) -> None:
    """Dataset, heatmaps, manifest, detection files, report and overlays under ``out_dir``."""
    out = Path(out_dir)
    ds_dir = out / "dataset"
    for s in res.scenes:
        write_image(s.pixels, ds_dir / s.image.file_path)
        (ds_dir / "heatmaps").mkdir(parents=True, exist_ok=True)
        write_adhm(s.tensor, ds_dir / "heatmaps" / f"{s.image.id:06d}.adhm")
    save_coco(res.dataset, ds_dir / "annotations.json")
    write_jsonl((r.to_json() for r in res.regions), out / "manifest.jsonl")
    save_detections(res.coarse, out / "coarse_detections.json")
    write_json([{**d.to_json(), "region": i} for i, d in res.fine], out / "fine_detections.json")
    save_detections(res.fused, out / "fused_detections.json")
    if res.fine_set is not None:
        save_fine_training_set(res.fine_set, out / "fine_train")
    write_json({"config": to_dict(res.config), **res.summary}, out / "report.json")
    with open(out / "report.txt", "w") as fh:
        fh.write(res.table() + "\n")
        fh.write(f"subregions: {res.summary['n_subregions']}\n")

    by_image_regions: dict[int, list[SubRegion]] = defaultdict(list)
    for r in res.regions:
        by_image_regions[r.image_id].append(r)
    by_image_dets: dict[int, list[Detection]] = defaultdict(list)
    for d in res.fused:
        by_image_dets[d.image_id].append(d)
    for s in res.scenes[: res.config.bench.overlays]:
        img = draw_overlay(s.pixels, s.annotations, by_image_regions[s.image.id], by_image_dets[s.image.id])
        write_image(img, out / "overlays" / f"{s.image.id:06d}.png")

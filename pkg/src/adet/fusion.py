"""Merge coarse detections with remapped subregion detections via class-aware NMS."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from adet.asoe import SubRegion
from adet.core import BBox, Detection, ImageRecord, boxes_to_array, clamp_box, iou_matrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FusionConfig:
    nms_iou: float = 0.5
    max_detections: int = 500
    score_floor: float = 0.0


def remap_to_global(
    d: Detection, region: SubRegion, image: ImageRecord | None = None
) -> Detection | None:
    """Map a detection from the resized subregion frame back to image pixels.

    The box is clamped to ``image`` when given, otherwise to the subregion
    rectangle. Returns ``None`` if nothing is left after clamping.
    """
    s = region.scale
    b = d.bbox
    moved = BBox(b.x / s + region.rect.x, b.y / s + region.rect.y, b.w / s, b.h / s)
    box = clamp_box(moved, image if image is not None else region.rect)
    if box is None:
        return None
    return Detection(box, d.category_id, d.score, region.image_id)


def remap_to_region(d: Detection, region: SubRegion) -> Detection:
    """Inverse of :func:`remap_to_global` for boxes that needed no clamping."""
    s = region.scale
    b = d.bbox
    box = BBox((b.x - region.rect.x) * s, (b.y - region.rect.y) * s, b.w * s, b.h * s)
    return Detection(box, d.category_id, d.score, d.image_id)


def _order(dets: Sequence[Detection]) -> list[int]:
    # score descending, ties by smaller x, then y, then w, h and input index
    return sorted(
        range(len(dets)),
        key=lambda i: (-dets[i].score, dets[i].bbox.x, dets[i].bbox.y, dets[i].bbox.w, dets[i].bbox.h, i),
    )


def nms(dets: Sequence[Detection], iou_thr: float = 0.5) -> list[Detection]:
    """Greedy per-category non-maximum suppression.

    A box survives iff its IoU with every higher-ranked surviving box of the
    same category is at most ``iou_thr``. Output is in rank order.
    """
    if not dets:
        return []
    order = _order(dets)
    boxes = boxes_to_array([dets[i].bbox for i in order])
    cats = np.array([dets[i].category_id for i in order])
    keep = np.zeros(len(order), dtype=bool)
    for cat in np.unique(cats):
        idx = np.flatnonzero(cats == cat)
        ious = iou_matrix(boxes[idx], boxes[idx])
        alive = np.ones(len(idx), dtype=bool)
        for k in range(len(idx)):
            if not alive[k]:
                continue
            keep[idx[k]] = True
            alive[k + 1 :] &= ious[k, k + 1 :] <= iou_thr
    return [dets[order[k]] for k in np.flatnonzero(keep)]


def fuse(
    coarse: Iterable[Detection],
    fine_per_region: Iterable[tuple[SubRegion, Iterable[Detection]]],
    cfg: FusionConfig = FusionConfig(),
    image: ImageRecord | None = None,
) -> list[Detection]:
    """Union of coarse and remapped fine detections, suppressed and capped.

    With ``image`` given, coarse boxes are clamped to it as well.
    """
    pool = []
    dropped = 0
    for d in coarse:
        box = d.bbox if image is None else clamp_box(d.bbox, image)
        if box is None:
            dropped += 1
        else:
            pool.append(d if box is d.bbox else Detection(box, d.category_id, d.score, d.image_id))
    for region, dets in fine_per_region:
        for d in dets:
            g = remap_to_global(d, region, image)
            if g is None:
                dropped += 1
            else:
                pool.append(g)
    if dropped:
        log.warning("dropped %d detections that fell outside the image", dropped)
    pool = [d for d in pool if d.score >= cfg.score_floor]
    kept = nms(pool, cfg.nms_iou)
    return kept[: cfg.max_detections]

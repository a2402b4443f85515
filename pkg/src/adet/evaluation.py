"""COCO-protocol average precision for detections against a :class:`DatasetIndex`."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from adet.core import SIZE_BUCKETS, BBox, DatasetIndex, Detection, boxes_to_array, iou_matrix, size_bucket

IOU_THRESHOLDS = np.round(np.linspace(0.5, 0.95, 10), 2)
RECALL_GRID = np.linspace(0.0, 1.0, 101)

METRIC_NAMES = ("ap", "ap_50", "ap_75", "ap_s", "ap_m", "ap_l")
METRIC_LABELS = ("AP", "AP_50", "AP_75", "AP_S", "AP_M", "AP_L")


class EvaluationError(ValueError):
    pass


@dataclass
class EvalReport:
    """Metrics in [0, 1]; ``None`` marks a metric with no ground truth behind it."""

    ap: float | None
    ap_50: float | None
    ap_75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None
    per_category_ap: dict[int, float | None] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["per_category_ap"] = {str(k): v for k, v in self.per_category_ap.items()}
        return out

    def table(self, title: str = "") -> str:
        return format_table([(title, self)])


def format_table(rows: Sequence[tuple[str, EvalReport]]) -> str:
    """Aligned text table of percentages, one row per report."""
    name_w = max([len("Method")] + [len(n) for n, _ in rows])
    head = f"{'Method':<{name_w}}" + "".join(f"{lbl:>8}" for lbl in METRIC_LABELS)
    lines = [head, "-" * len(head)]
    for name, rep in rows:
        cells = []
        for m in METRIC_NAMES:
            v = getattr(rep, m)
            cells.append(f"{'-':>8}" if v is None else f"{100 * v:>8.1f}")
        lines.append(f"{name:<{name_w}}" + "".join(cells))
    return "\n".join(lines)


def _rank(d: Detection) -> tuple:
    # score descending; exact ties broken by box so input order never matters
    return (-d.score, d.bbox.x, d.bbox.y, d.bbox.w, d.bbox.h)


def match_detections(
    dets: Sequence[Detection],
    gts: Sequence[BBox],
    iou_thr: float,
    gt_ignore: Sequence[bool] | None = None,
) -> list[tuple[Detection, int | None]]:
    """Greedy one-to-one matching for one image and one category.

    Detections are visited by descending score; each takes the still-free
    ground truth with the highest IoU at or above ``iou_thr``. Non-ignored
    ground truth is preferred over ignored ground truth. Returns pairs of
    detection and matched ground-truth index (``None`` when unmatched).
    """
    order = sorted(range(len(dets)), key=lambda i: _rank(dets[i]))
    ious = iou_matrix(boxes_to_array([dets[i].bbox for i in order]), boxes_to_array(list(gts)))
    ignore = np.zeros(len(gts), dtype=bool) if gt_ignore is None else np.asarray(gt_ignore, bool)
    matched = _greedy_match(ious, ignore, iou_thr)
    return [(dets[i], None if m < 0 else int(m)) for i, m in zip(order, matched)]


def _greedy_match(ious: np.ndarray, gt_ignore: np.ndarray, thr: float) -> np.ndarray:
    """``ious`` rows are detections in score order. Returns matched gt index or -1."""
    n_det, n_gt = ious.shape
    out = np.full(n_det, -1, dtype=np.int64)
    if n_gt == 0:
        return out
    # visit non-ignored ground truth first, as COCO does
    gt_order = np.argsort(gt_ignore, kind="stable")
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        best, best_iou = -1, min(thr, 1 - 1e-10)
        for g in gt_order:
            if taken[g]:
                continue
            if best > -1 and not gt_ignore[best] and gt_ignore[g]:
                break
            if ious[d, g] < best_iou:
                continue
            best, best_iou = g, ious[d, g]
        if best > -1:
            taken[best] = True
            out[d] = best
    return out


def average_precision(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> float | None:
    """101-point interpolated AP from per-detection scores and TP flags.

    ``None`` when there is no ground truth.
    """
    if n_gt == 0:
        return None
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-np.asarray(scores), kind="mergesort")
    tp = np.asarray(tp, dtype=bool)[order]
    tps = np.cumsum(tp)
    fps = np.cumsum(~tp)
    recall = tps / n_gt
    precision = tps / np.maximum(tps + fps, np.finfo(np.float64).eps)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    q = np.where(idx < len(envelope), envelope[np.minimum(idx, len(envelope) - 1)], 0.0)
    return float(q.mean())


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def evaluate(
    dets: Sequence[Detection],
    dataset: DatasetIndex,
    max_detections: int = 500,
    iou_thresholds: Sequence[float] = tuple(IOU_THRESHOLDS),
) -> EvalReport:
    bad = sorted(
        {
            (d.image_id, d.category_id)
            for d in dets
            if not dataset.has_image(d.image_id) or not dataset.has_category(d.category_id)
        }
    )
    if bad:
        listing = ", ".join(f"(image {i}, category {c})" for i, c in bad[:20])
        more = f" and {len(bad) - 20} more" if len(bad) > 20 else ""
        raise EvaluationError(f"detections reference unknown image/category: {listing}{more}")

    by_image: dict[int, list[Detection]] = defaultdict(list)
    for d in dets:
        by_image[d.image_id].append(d)
    capped: dict[tuple[int, int], list[Detection]] = defaultdict(list)
    for img_id, ds in by_image.items():
        ds = sorted(ds, key=_rank)[:max_detections]
        for d in ds:
            capped[(img_id, d.category_id)].append(d)

    gts: dict[tuple[int, int], list[BBox]] = defaultdict(list)
    for a in dataset.annotations:
        gts[(a.image_id, a.category_id)].append(a.bbox)

    thresholds = [float(t) for t in iou_thresholds]
    cat_ids = [c.id for c in dataset.categories]
    ranges = (None,) + SIZE_BUCKETS
    # results[(range, cat, t)] -> (scores, tps, n_gt)
    acc = {
        (r, c, t): ([], [], 0) for r in ranges for c in cat_ids for t in range(len(thresholds))
    }
    keys = set(capped) | set(gts)
    for img_id, cat in sorted(keys):
        ds = sorted(capped.get((img_id, cat), []), key=_rank)
        g = gts.get((img_id, cat), [])
        ious = iou_matrix(boxes_to_array([d.bbox for d in ds]), boxes_to_array(g))
        scores = np.array([d.score for d in ds])
        det_bucket = [size_bucket(d.bbox) for d in ds]
        gt_bucket = [size_bucket(b) for b in g]
        for r in ranges:
            gt_ign = np.array([r is not None and b != r for b in gt_bucket], dtype=bool)
            n_gt = int((~gt_ign).sum())
            for ti, thr in enumerate(thresholds):
                m = _greedy_match(ious, gt_ign, thr)
                det_ign = np.array(
                    [
                        (m[k] >= 0 and gt_ign[m[k]]) or (m[k] < 0 and r is not None and det_bucket[k] != r)
                        for k in range(len(ds))
                    ],
                    dtype=bool,
                )
                s, tp, n = acc[(r, cat, ti)]
                keep = ~det_ign
                s.extend(scores[keep].tolist())
                tp.extend((m[keep] >= 0).tolist())
                acc[(r, cat, ti)] = (s, tp, n + n_gt)

    def ap_for(r, ti: int) -> dict[int, float | None]:
        out = {}
        for c in cat_ids:
            s, tp, n = acc[(r, c, ti)]
            out[c] = average_precision(np.array(s), np.array(tp, dtype=bool), n)
        return out

    per_t = [ap_for(None, ti) for ti in range(len(thresholds))]
    per_cat = {c: _mean(p[c] for p in per_t) for c in cat_ids}

    def at(t: float) -> float | None:
        if t not in thresholds:
            return None
        return _mean(per_t[thresholds.index(t)].values())

    def overall(r) -> float | None:
        return _mean(_mean(ap_for(r, ti).values()) for ti in range(len(thresholds)))

    return EvalReport(
        ap=_mean(_mean(p.values()) for p in per_t),
        ap_50=at(0.5),
        ap_75=at(0.75),
        ap_s=overall("small"),
        ap_m=overall("medium"),
        ap_l=overall("large"),
        per_category_ap=per_cat,
    )

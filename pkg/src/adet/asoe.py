"""Subregion proposal: cluster hot positions and crop around each cluster."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np

from adet.core import BBox, ImageRecord, clamp_box
from adet.heatmap import ActivationTensor, PositionSet, activation_map, filter_positions


@dataclass(frozen=True)
class AsoeConfig:
    layer: int = 3
    gamma: float = 0.5
    n: int = 4
    seed: int = 0
    pad: float = 16.0
    min_side: float = 64.0
    fine_input_long_side: float = 1333.0
    pre_activated: bool = False
    n_init: int = 10
    max_iter: int = 100
    tol: float = 1e-4


@dataclass(frozen=True, eq=False)
class Cluster:
    id: int
    members: np.ndarray  # (M, 2) positions
    centroid: tuple[float, float]


@dataclass(frozen=True)
class SubRegion:
    image_id: int
    rect: BBox
    center: tuple[float, float]
    scale: float
    cluster_id: int

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "cluster_id": self.cluster_id,
            "rect": self.rect.tolist(),
            "center": [float(self.center[0]), float(self.center[1])],
            "scale": self.scale,
        }

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> SubRegion:
        return cls(
            image_id=int(rec["image_id"]),
            rect=BBox(*map(float, rec["rect"])),
            center=(float(rec["center"][0]), float(rec["center"][1])),
            scale=float(rec["scale"]),
            cluster_id=int(rec["cluster_id"]),
        )


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _kmeans_pp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [points[rng.integers(len(points))]]
    closest = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            break  # every point coincides with a chosen center
        idx = rng.choice(len(points), p=closest / total)
        centers.append(points[idx])
        closest = np.minimum(closest, ((points - points[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def _lloyd(points: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    k = len(centers)
    labels = _sq_dists(points, centers).argmin(axis=1)
    for _ in range(max_iter):
        new = centers.copy()
        for c in range(k):
            mask = labels == c
            if mask.any():
                new[c] = points[mask].mean(axis=0)
            else:
                # Re-seed an empty cluster at the point worst served by its center.
                d = ((points - new[labels]) ** 2).sum(axis=1)
                far = int(d.argmax())
                new[c] = points[far]
                labels[far] = c
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        new_labels = _sq_dists(points, centers).argmin(axis=1)
        if shift < tol and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


def _hartigan(points: np.ndarray, labels: np.ndarray, k: int, max_iter: int) -> np.ndarray:
    """Single-point moves that lower total SSE, until none is left.

    A stable result also has every point nearest to its own centroid.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, 2))
    np.add.at(sums, labels, points)
    for _ in range(max_iter):
        moved = False
        for i, x in enumerate(points):
            a = labels[i]
            if counts[a] <= 1:
                continue
            means = sums / np.maximum(counts, 1.0)[:, None]
            d = ((means - x) ** 2).sum(axis=1)
            cost_out = counts[a] / (counts[a] - 1.0) * d[a]
            cost_in = counts / (counts + 1.0) * d
            cost_in[a] = np.inf
            cost_in[counts == 0] = np.inf
            b = int(cost_in.argmin())
            if cost_in[b] < cost_out * (1.0 - 1e-12):
                labels[i] = b
                counts[a] -= 1.0
                counts[b] += 1.0
                sums[a] -= x
                sums[b] += x
                moved = True
        if not moved:
            break
    return labels


def kmeans_sse(points: np.ndarray, labels: np.ndarray) -> float:
    sse = 0.0
    for c in np.unique(labels):
        m = points[labels == c]
        sse += float(((m - m.mean(axis=0)) ** 2).sum())
    return sse


def cluster_positions(
    T: PositionSet | np.ndarray,
    n: int,
    seed: int = 0,
    n_init: int = 10,
    max_iter: int = 100,
    tol: float = 1e-4,
) -> list[Cluster]:
    """Seeded k-means++ clustering of interest positions into at most ``n`` groups.

    Each restart runs Lloyd iterations followed by Hartigan single-point
    refinement; the best of ``n_init`` restarts by within-cluster SSE is kept. Clusters are
    returned ordered by centroid ``(x, y)`` and never empty.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    pts = np.asarray(T.positions if isinstance(T, PositionSet) else T, dtype=np.float64)
    pts = pts.reshape(-1, 2)
    if len(pts) == 0:
        return []
    k = min(n, len(pts))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(max(1, n_init)):
        init = _kmeans_pp_init(pts, k, rng)
        _, labels = _lloyd(pts, init, max_iter, tol)
        labels = _hartigan(pts, labels, len(init), max_iter)
        sse = kmeans_sse(pts, labels)
        if best is None or sse < best[0]:
            best = (sse, labels)
    labels = best[1]

    groups = []
    for c in np.unique(labels):
        members = pts[labels == c]
        cx, cy = members.mean(axis=0)
        groups.append((float(cx), float(cy), members))
    groups.sort(key=lambda g: (g[0], g[1]))
    return [Cluster(i, m, (cx, cy)) for i, (cx, cy, m) in enumerate(groups)]


def region_rect(members: np.ndarray, image: ImageRecord, pad: float, min_side: float) -> BBox:
    """Members' bounding box, padded, grown to ``min_side`` per axis, clamped to the image."""
    x0, y0 = members.min(axis=0) - pad
    x1, y1 = members.max(axis=0) + pad
    w, h = x1 - x0, y1 - y0
    if w < min_side:
        x0 -= (min_side - w) / 2.0
        w = min_side
    if h < min_side:
        y0 -= (min_side - h) / 2.0
        h = min_side
    rect = clamp_box(BBox(float(x0), float(y0), float(w), float(h)), image)
    if rect is None:
        raise ValueError(f"cluster lies entirely outside image {image.id}")
    return rect


def regions_from_clusters(
    clusters: Sequence[Cluster],
    image: ImageRecord,
    pad: float = 16.0,
    min_side: float = 64.0,
    fine_input_long_side: float = 1333.0,
) -> list[SubRegion]:
    if pad < 0 or min_side < 1:
        raise ValueError("pad must be >= 0 and min_side >= 1")
    out = []
    for c in sorted(clusters, key=lambda c: c.id):
        rect = region_rect(np.asarray(c.members, dtype=np.float64), image, pad, min_side)
        out.append(
            SubRegion(
                image_id=image.id,
                rect=rect,
                center=c.centroid,
                scale=fine_input_long_side / max(rect.w, rect.h),
                cluster_id=c.id,
            )
        )
    return out


def image_for_tensor(F: ActivationTensor) -> ImageRecord:
    """Image extent implied by the feature grid when no record is available."""
    return ImageRecord(F.image_id, F.width * F.stride, F.height * F.stride)


def generate_subregions(
    F: ActivationTensor, cfg: AsoeConfig = AsoeConfig(), image: ImageRecord | None = None
) -> list[SubRegion]:
    V = activation_map(F, pre_activated=cfg.pre_activated)
    T = filter_positions(V, cfg.gamma)
    clusters = cluster_positions(T, cfg.n, cfg.seed, cfg.n_init, cfg.max_iter, cfg.tol)
    if image is None:
        image = image_for_tensor(F)
    return regions_from_clusters(clusters, image, cfg.pad, cfg.min_side, cfg.fine_input_long_side)

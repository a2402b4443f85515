"""Dynamic class-balanced copy-paste for tail classes.

Tail-class instances found inside proposed subregions are cropped with
context and queued in fixed-capacity FIFO banks. Augmented instances are
pasted back near a region's cluster center, at the first overlap-free spot
found by a breadth-first walk over a lattice whose step equals the box size.

Pixel buffers are ``(H, W, 3)`` uint8 arrays. Masks mark a pixel cell
``[c, c+1) x [r, r+1)`` as occupied when a box overlaps it with positive area.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import cv2
import numpy as np

from adet.asoe import SubRegion
from adet.core import Annotation, BBox, DatasetIndex, clamp_box

# right, down, left, up, then the diagonals
NEIGHBOR_ORDER: tuple[tuple[int, int], ...] = (
    (1, 0), (0, 1), (-1, 0), (0, -1),
    (1, 1), (-1, 1), (-1, -1), (1, -1),
)


@dataclass(frozen=True)
class AugmentConfig:
    scale: tuple[float, float] = (0.8, 1.2)
    rotate: tuple[float, float] = (-15.0, 15.0)  # degrees
    shift: tuple[float, float] = (-0.05, 0.05)  # fraction of patch size
    brightness: tuple[float, float] = (-0.2, 0.2)
    contrast: tuple[float, float] = (-0.2, 0.2)
    max_retries: int = 5


@dataclass(frozen=True)
class DccConfig:
    capacity: int = 10
    expand: float = 1.5
    budget: int = 2
    tail_classes: tuple[int | str, ...] | None = None  # None keeps the dataset's is_tail flags
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)


@dataclass(frozen=True, eq=False)
class InstancePatch:
    category_id: int
    pixels: np.ndarray
    bbox_in_patch: BBox
    source_annotation_id: int

    @property
    def object_window(self) -> tuple[int, int, int, int]:
        """Integer pixel window ``(x, y, w, h)`` covering ``bbox_in_patch``."""
        return pixel_window(self.bbox_in_patch)


class MemoryBank:
    """Per-class FIFO queues of instance patches."""

    def __init__(self, classes: Iterable[int], capacity: int = 10) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._queues: dict[int, deque[InstancePatch]] = {
            int(c): deque(maxlen=capacity) for c in sorted(set(classes))
        }

    @property
    def classes(self) -> list[int]:
        return list(self._queues)

    def enqueue(self, patch: InstancePatch) -> None:
        if patch.category_id not in self._queues:
            raise KeyError(f"class {patch.category_id} has no memory bank")
        self._queues[patch.category_id].append(patch)

    def __getitem__(self, category_id: int) -> list[InstancePatch]:
        return list(self._queues[category_id])

    def __contains__(self, category_id: int) -> bool:
        return category_id in self._queues

    def __len__(self) -> int:
        return sum(len(q) for q in self._queues.values())

    def nonempty_classes(self) -> list[int]:
        return [c for c, q in self._queues.items() if q]


@dataclass(frozen=True, eq=False)
class OccupancyMask:
    cells: np.ndarray  # (H, W) uint8 in {0, 1}

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    def popcount(self) -> int:
        return int(self.cells.sum())


class PastePosition(NamedTuple):
    x: int
    y: int
    layer: int


@dataclass(frozen=True)
class PasteResult:
    position: tuple[int, int]
    pasted_bbox: BBox
    new_annotation: Annotation
    layers_explored: int


@dataclass(eq=False)
class AugmentedRegion:
    region: SubRegion
    window: tuple[int, int, int, int]
    pixels: np.ndarray
    annotations: list[Annotation]
    pastes: list[PasteResult]
    mask: OccupancyMask


def pixel_window(b: BBox) -> tuple[int, int, int, int]:
    x0, y0 = math.floor(b.x), math.floor(b.y)
    return x0, y0, math.ceil(b.x2) - x0, math.ceil(b.y2) - y0


def region_window(region: SubRegion) -> tuple[int, int, int, int]:
    return pixel_window(region.rect)


def extract_instance(image: np.ndarray, ann: Annotation, expand: float = 1.5) -> InstancePatch:
    """Crop ``ann`` with its box scaled by ``expand`` about the center, clamped to the image."""
    h, w = image.shape[:2]
    bounds = BBox(0.0, 0.0, float(w), float(h))
    box = clamp_box(ann.bbox, bounds)
    if box is None:
        raise ValueError(f"annotation {ann.id} is empty inside the image")
    cx, cy = box.center
    ew, eh = box.w * expand, box.h * expand
    rect = clamp_box(BBox(cx - ew / 2.0, cy - eh / 2.0, ew, eh), bounds)
    px, py, pw, ph = pixel_window(rect)
    pixels = image[py : py + ph, px : px + pw].copy()
    return InstancePatch(ann.category_id, pixels, box.translate(-px, -py), ann.id)


def enqueue_region_instances(
    bank: MemoryBank,
    region: SubRegion,
    dataset: DatasetIndex,
    image: np.ndarray,
    expand: float = 1.5,
) -> MemoryBank:
    """Queue every banked-class instance lying fully inside ``region``, by ascending id."""
    anns = sorted(dataset.annotations_for(region.image_id), key=lambda a: a.id)
    for ann in anns:
        if ann.category_id in bank and region.rect.contains_box(ann.bbox):
            bank.enqueue(extract_instance(image, ann, expand))
    return bank


def _affine(patch_w: int, patch_h: int, scale: float, angle: float, dx: float, dy: float) -> np.ndarray:
    m = cv2.getRotationMatrix2D((patch_w / 2.0, patch_h / 2.0), angle, scale)
    m[0, 2] += dx
    m[1, 2] += dy
    return m


def transform_instance(
    p: InstancePatch,
    scale: float = 1.0,
    angle: float = 0.0,
    shift: tuple[float, float] = (0.0, 0.0),
    brightness: float = 0.0,
    contrast: float = 0.0,
) -> InstancePatch | None:
    """Apply a fixed shift-scale-rotate plus brightness/contrast change.

    ``shift`` is a fraction of the patch size. Returns ``None`` when the
    object box leaves the patch.
    """
    ph, pw = p.pixels.shape[:2]
    dx, dy = shift[0] * pw, shift[1] * ph
    if scale == 1.0 and angle == 0.0 and dx == 0.0 and dy == 0.0:
        pixels = p.pixels.copy()
        box = p.bbox_in_patch
    else:
        m = _affine(pw, ph, scale, angle, dx, dy)
        pixels = cv2.warpAffine(
            p.pixels, m, (pw, ph), flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_REFLECT_101
        )
        b = p.bbox_in_patch
        corners = np.array([[b.x, b.y, 1], [b.x2, b.y, 1], [b.x, b.y2, 1], [b.x2, b.y2, 1]])
        moved = corners @ m.T
        x1, y1 = moved.min(axis=0)
        x2, y2 = moved.max(axis=0)
        if not (x2 > x1 and y2 > y1):
            return None
        box = clamp_box(BBox.from_xyxy(x1, y1, x2, y2), BBox(0.0, 0.0, float(pw), float(ph)))
        if box is None:
            return None
    if brightness != 0.0 or contrast != 0.0:
        out = pixels.astype(np.float32) * (1.0 + contrast) + brightness * 255.0
        pixels = np.clip(out, 0, 255).astype(np.uint8)
    return InstancePatch(p.category_id, pixels, box, p.source_annotation_id)


def augment_instance(p: InstancePatch, seed: int, cfg: AugmentConfig = AugmentConfig()) -> InstancePatch:
    """Seeded random shift-scale-rotate and brightness/contrast jitter."""
    for attempt in range(cfg.max_retries + 1):
        rng = np.random.default_rng([seed, attempt])
        out = transform_instance(
            p,
            scale=rng.uniform(*cfg.scale),
            angle=rng.uniform(*cfg.rotate),
            shift=(rng.uniform(*cfg.shift), rng.uniform(*cfg.shift)),
            brightness=rng.uniform(*cfg.brightness),
            contrast=rng.uniform(*cfg.contrast),
        )
        if out is not None:
            return out
    return p


def rasterize(boxes: Iterable[BBox], height: int, width: int) -> np.ndarray:
    cells = np.zeros((height, width), dtype=np.uint8)
    for b in boxes:
        x0, y0 = max(math.floor(b.x), 0), max(math.floor(b.y), 0)
        x1, y1 = min(math.ceil(b.x2), width), min(math.ceil(b.y2), height)
        if x1 > x0 and y1 > y0:
            cells[y0:y1, x0:x1] = 1
    return cells


def build_occupancy_mask(
    region: SubRegion | tuple[int, int], existing: Iterable[BBox]
) -> OccupancyMask:
    """Rasterized union of ``existing`` boxes (region coordinates).

    ``region`` is a :class:`SubRegion` or a plain ``(height, width)``.
    """
    if isinstance(region, SubRegion):
        _, _, w, h = region_window(region)
    else:
        h, w = region
    return OccupancyMask(rasterize(existing, h, w))


def _integral(cells: np.ndarray) -> np.ndarray:
    s = np.zeros((cells.shape[0] + 1, cells.shape[1] + 1), dtype=np.int64)
    s[1:, 1:] = cells.cumsum(axis=0).cumsum(axis=1)
    return s


def find_paste_position(
    region: SubRegion | tuple[int, int],
    center: tuple[float, float],
    mask: OccupancyMask,
    box: tuple[int, int],
) -> PastePosition | None:
    """Breadth-first search for a free ``w x h`` slot nearest ``center``.

    Candidates form the lattice ``(x0 + a*w, y0 + b*h)`` where ``(x0, y0)``
    centers the box on ``center`` (shifted into bounds). Layers grow by
    8-connected steps; within a layer neighbors expand right, down, left, up,
    then diagonally. Returns ``None`` when no lattice slot is free.
    """
    H, W = mask.cells.shape
    bw, bh = int(box[0]), int(box[1])
    if bw < 1 or bh < 1 or bw > W or bh > H:
        raise ValueError(f"box {bw}x{bh} does not fit a {W}x{H} region")
    x0 = min(max(math.floor(center[0] - bw / 2.0 + 0.5), 0), W - bw)
    y0 = min(max(math.floor(center[1] - bh / 2.0 + 0.5), 0), H - bh)
    a_lo, a_hi = -(x0 // bw), (W - bw - x0) // bw
    b_lo, b_hi = -(y0 // bh), (H - bh - y0) // bh
    sat = _integral(mask.cells)

    def free(a: int, b: int) -> bool:
        x, y = x0 + a * bw, y0 + b * bh
        return sat[y + bh, x + bw] - sat[y, x + bw] - sat[y + bh, x] + sat[y, x] == 0

    queue = deque([(0, 0, 0)])
    seen = {(0, 0)}
    while queue:
        a, b, depth = queue.popleft()
        if free(a, b):
            return PastePosition(x0 + a * bw, y0 + b * bh, depth)
        for da, db in NEIGHBOR_ORDER:
            na, nb = a + da, b + db
            if a_lo <= na <= a_hi and b_lo <= nb <= b_hi and (na, nb) not in seen:
                seen.add((na, nb))
                queue.append((na, nb, depth + 1))
    return None


def paste(
    pixels: np.ndarray,
    mask: OccupancyMask,
    p: InstancePatch,
    pos: tuple[int, int],
    ann_id: int = 0,
    image_id: int = 0,
) -> tuple[np.ndarray, OccupancyMask, Annotation]:
    """Hard-copy the object window of ``p`` at ``pos`` (top-left of that window)."""
    wx, wy, ww, wh = p.object_window
    X, Y = int(pos[0]), int(pos[1])
    out = pixels.copy()
    out[Y : Y + wh, X : X + ww] = p.pixels[wy : wy + wh, wx : wx + ww]
    cells = mask.cells.copy()
    cells[Y : Y + wh, X : X + ww] = 1
    b = p.bbox_in_patch
    new_box = BBox(X + (b.x - wx), Y + (b.y - wy), b.w, b.h)
    return out, OccupancyMask(cells), Annotation(ann_id, new_box, p.category_id, image_id)


def crop_annotations(region: SubRegion, dataset: DatasetIndex, image_id: int | None = None) -> list[Annotation]:
    """Ground truth clipped to the region's pixel window, in window coordinates."""
    x0, y0, w, h = region_window(region)
    window = BBox(float(x0), float(y0), float(w), float(h))
    out = []
    for ann in sorted(dataset.annotations_for(region.image_id), key=lambda a: a.id):
        box = clamp_box(ann.bbox, window)
        if box is None:
            continue
        out.append(
            Annotation(
                ann.id,
                box.translate(-x0, -y0),
                ann.category_id,
                region.image_id if image_id is None else image_id,
                dict(ann.extra),
            )
        )
    return out


def augment_region(
    region: SubRegion,
    dataset: DatasetIndex,
    banks: MemoryBank,
    image: np.ndarray,
    budget: int = 2,
    seed: int = 0,
    augment: AugmentConfig = AugmentConfig(),
    next_ann_id: int = 1,
    image_id: int | None = None,
    class_counts: dict[int, int] | None = None,
) -> AugmentedRegion:
    """Crop ``region`` and paste up to ``budget`` banked instances into it.

    New annotations get ids from ``next_ann_id`` upward and carry
    ``source_annotation_id``, ``seed`` and ``paste_position`` in ``extra``.
    ``class_counts`` is updated in place with every paste.
    """
    if budget < 0:
        raise ValueError("budget must be >= 0")
    x0, y0, w, h = region_window(region)
    pixels = image[y0 : y0 + h, x0 : x0 + w].copy()
    anns = crop_annotations(region, dataset, image_id)
    mask = build_occupancy_mask((h, w), [a.bbox for a in anns])
    center = (region.center[0] - x0, region.center[1] - y0)
    rng = np.random.default_rng(seed)
    pastes: list[PasteResult] = []
    for _ in range(budget):
        classes = banks.nonempty_classes()
        if not classes:
            break
        cls = classes[int(rng.integers(len(classes)))]
        bank = banks[cls]
        patch = bank[int(rng.integers(len(bank)))]
        patch_seed = int(rng.integers(2**31))
        aug = augment_instance(patch, patch_seed, augment)
        _, _, ow, oh = aug.object_window
        if ow > w or oh > h:
            continue
        pos = find_paste_position((h, w), center, mask, (ow, oh))
        if pos is None:
            continue
        pixels, mask, ann = paste(
            pixels, mask, aug, (pos.x, pos.y), next_ann_id,
            region.image_id if image_id is None else image_id,
        )
        ann = replace(
            ann,
            extra={
                "source_annotation_id": patch.source_annotation_id,
                "seed": patch_seed,
                "paste_position": [pos.x, pos.y],
            },
        )
        next_ann_id += 1
        anns.append(ann)
        pastes.append(PasteResult((pos.x, pos.y), ann.bbox, ann, pos.layer))
        if class_counts is not None:
            class_counts[cls] = class_counts.get(cls, 0) + 1
    return AugmentedRegion(region, (x0, y0, w, h), pixels, anns, pastes, mask)


def region_seed(seed: int, image_id: int, cluster_id: int) -> int:
    return int(np.random.SeedSequence([seed, image_id, cluster_id]).generate_state(1)[0])


def tail_ids(dataset: DatasetIndex, tail_classes: Sequence[int | str] | None) -> list[int]:
    if tail_classes is None:
        return dataset.tail_category_ids
    wanted = set(tail_classes)
    return sorted(c.id for c in dataset.categories if c.id in wanted or c.name in wanted)

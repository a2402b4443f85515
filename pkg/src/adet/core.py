"""Domain types and box geometry shared by every stage of the pipeline.

Boxes use the COCO convention ``(x, y, w, h)`` with the origin at the top-left
corner of the image.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Literal, Sequence

import numpy as np

SMALL_MAX_AREA = 32.0**2
MEDIUM_MAX_AREA = 96.0**2

SizeBucket = Literal["small", "medium", "large"]
SIZE_BUCKETS: tuple[SizeBucket, ...] = ("small", "medium", "large")


@dataclass(frozen=True)
class BBox:
    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        vals = (self.x, self.y, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates: {vals}")
        if self.w <= 0 or self.h <= 0:
            raise ValueError(f"box must have positive width and height: {vals}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def center(self) -> tuple[float, float]:
        return (self.x + self.w / 2.0, self.y + self.h / 2.0)

    @classmethod
    def from_xyxy(cls, x1: float, y1: float, x2: float, y2: float) -> BBox:
        return cls(x1, y1, x2 - x1, y2 - y1)

    def translate(self, dx: float, dy: float) -> BBox:
        return BBox(self.x + dx, self.y + dy, self.w, self.h)

    def contains_box(self, other: BBox) -> bool:
        return (
            other.x >= self.x
            and other.y >= self.y
            and other.x2 <= self.x2
            and other.y2 <= self.y2
        )

    def contains_point(self, px: float, py: float) -> bool:
        """Closed-rectangle membership test."""
        return self.x <= px <= self.x2 and self.y <= py <= self.y2

    def tolist(self) -> list[float]:
        return [self.x, self.y, self.w, self.h]


@dataclass(frozen=True)
class Detection:
    bbox: BBox
    category_id: int
    score: float
    image_id: int

    def __post_init__(self) -> None:
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must lie in [0, 1], got {self.score}")

    def to_json(self) -> dict[str, Any]:
        return {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "bbox": self.bbox.tolist(),
            "score": self.score,
        }

    @classmethod
    def from_json(cls, rec: dict[str, Any]) -> Detection:
        return cls(
            bbox=BBox(*map(float, rec["bbox"])),
            category_id=int(rec["category_id"]),
            score=float(rec["score"]),
            image_id=int(rec["image_id"]),
        )


@dataclass(frozen=True)
class Annotation:
    id: int
    bbox: BBox
    category_id: int
    image_id: int
    # Unknown COCO fields, kept so they survive a load/save round trip.
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    @property
    def area(self) -> float:
        return self.bbox.area


@dataclass(frozen=True)
class ImageRecord:
    id: int
    width: int
    height: int
    file_path: str = ""
    extra: dict[str, Any] = field(default_factory=dict, compare=False)

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image {self.id} has non-positive size {self.width}x{self.height}")

    @property
    def bounds(self) -> BBox:
        return BBox(0.0, 0.0, float(self.width), float(self.height))


@dataclass(frozen=True)
class Category:
    id: int
    name: str
    is_tail: bool = False
    extra: dict[str, Any] = field(default_factory=dict, compare=False)


@dataclass
class DatasetIndex:
    """Images, annotations and categories in a COCO-subset layout.

    Construction validates that every annotation resolves to one image and
    lies inside it.
    """

    images: list[ImageRecord]
    annotations: list[Annotation]
    categories: list[Category]
    extra: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._images = {}
        for img in self.images:
            if img.id in self._images:
                raise ValueError(f"duplicate image id {img.id}")
            self._images[img.id] = img
        self._categories = {c.id: c for c in self.categories}
        self._by_image: dict[int, list[Annotation]] = {i: [] for i in self._images}
        for ann in self.annotations:
            img = self._images.get(ann.image_id)
            if img is None:
                raise ValueError(f"annotation {ann.id} references unknown image {ann.image_id}")
            if not img.bounds.contains_box(ann.bbox):
                raise ValueError(f"annotation {ann.id} lies outside image {img.id}")
            self._by_image[ann.image_id].append(ann)

    def image(self, image_id: int) -> ImageRecord:
        return self._images[image_id]

    def has_image(self, image_id: int) -> bool:
        return image_id in self._images

    def category(self, category_id: int) -> Category:
        return self._categories[category_id]

    def has_category(self, category_id: int) -> bool:
        return category_id in self._categories

    def annotations_for(self, image_id: int) -> list[Annotation]:
        return self._by_image.get(image_id, [])

    @property
    def tail_category_ids(self) -> list[int]:
        return sorted(c.id for c in self.categories if c.is_tail)

    def class_counts(self) -> dict[int, int]:
        counts = {c.id: 0 for c in self.categories}
        for ann in self.annotations:
            counts[ann.category_id] = counts.get(ann.category_id, 0) + 1
        return counts

    def with_tail_classes(self, tail: Iterable[int | str]) -> DatasetIndex:
        """Copy of the index with ``is_tail`` set from ids or names."""
        tail = set(tail)
        cats = [
            Category(c.id, c.name, c.id in tail or c.name in tail, c.extra)
            for c in self.categories
        ]
        return DatasetIndex(list(self.images), list(self.annotations), cats, dict(self.extra))


def iou(a: BBox, b: BBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x, b.x)
    ih = min(a.y2, b.y2) - max(a.y, b.y)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    # areas from edge coordinates so that iou(a, a) == 1 exactly
    area_a = (a.x2 - a.x) * (a.y2 - a.y)
    area_b = (b.x2 - b.x) * (b.y2 - b.y)
    return inter / (area_a + area_b - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(N, 4)`` / ``(M, 4)`` arrays of xywh boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax2 = a[:, 0] + a[:, 2]
    ay2 = a[:, 1] + a[:, 3]
    bx2 = b[:, 0] + b[:, 2]
    by2 = b[:, 1] + b[:, 3]
    iw = np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(ay2[:, None], by2[None, :]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (ax2 - a[:, 0]) * (ay2 - a[:, 1])
    area_b = (bx2 - b[:, 0]) * (by2 - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4), dtype=np.float64)
    return np.array([b.tolist() for b in boxes], dtype=np.float64)


def clamp_box(b: BBox, bounds: ImageRecord | BBox) -> BBox | None:
    """Intersect ``b`` with the image (or any rectangle); ``None`` if empty."""
    if isinstance(bounds, ImageRecord):
        bounds = bounds.bounds
    x1 = max(b.x, bounds.x)
    y1 = max(b.y, bounds.y)
    x2 = min(b.x2, bounds.x2)
    y2 = min(b.y2, bounds.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    if (x1, y1, x2, y2) == (b.x, b.y, b.x2, b.y2):
        return b
    return BBox.from_xyxy(x1, y1, x2, y2)


def size_bucket(a: Annotation | BBox | float) -> SizeBucket:
    """COCO size class; both 32**2 and 96**2 fall in ``medium``."""
    if isinstance(a, Annotation):
        area = a.area
    elif isinstance(a, BBox):
        area = a.area
    else:
        area = float(a)
    if area < SMALL_MAX_AREA:
        return "small"
    if area <= MEDIUM_MAX_AREA:
        return "medium"
    return "large"

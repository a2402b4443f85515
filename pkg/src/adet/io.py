"""File plumbing: COCO-subset annotations, detection files, images, JSON lines."""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Any, Iterable

import cv2
import numpy as np

from adet.core import (
    Annotation,
    BBox,
    Category,
    DatasetIndex,
    Detection,
    ImageRecord,
    clamp_box,
)

PathLike = str | os.PathLike

_IMAGE_KEYS = ("id", "width", "height", "file_name")
_ANN_KEYS = ("id", "image_id", "category_id", "bbox", "area")
_CAT_KEYS = ("id", "name", "is_tail")


class SchemaError(ValueError):
    """Raised when an input file does not follow the expected schema.

    ``path`` names the offending field, e.g. ``annotations[3].bbox``.
    """

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


def _require(rec: dict, key: str, where: str) -> Any:
    if not isinstance(rec, dict):
        raise SchemaError(where, "expected an object")
    if key not in rec:
        raise SchemaError(f"{where}.{key}", "missing field")
    return rec[key]


def _parse_bbox(value: Any, where: str) -> tuple[float, float, float, float]:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise SchemaError(where, "expected [x, y, w, h]")
    try:
        return tuple(float(v) for v in value)  # type: ignore[return-value]
    except (TypeError, ValueError) as exc:
        raise SchemaError(where, f"non-numeric bbox: {exc}") from None


def dataset_from_coco(data: dict[str, Any]) -> DatasetIndex:
    """Build a :class:`DatasetIndex` from a decoded COCO-subset dict.

    Boxes are clamped into their image; boxes that are empty or degenerate
    after clamping are rejected.
    """
    if not isinstance(data, dict):
        raise SchemaError("$", "expected a top-level object")
    images = []
    for i, rec in enumerate(_require(data, "images", "$")):
        where = f"images[{i}]"
        try:
            images.append(
                ImageRecord(
                    id=int(_require(rec, "id", where)),
                    width=int(_require(rec, "width", where)),
                    height=int(_require(rec, "height", where)),
                    file_path=str(rec.get("file_name", "")),
                    extra={k: v for k, v in rec.items() if k not in _IMAGE_KEYS},
                )
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, SchemaError):
                raise
            raise SchemaError(where, str(exc)) from None
    sizes = {img.id: img for img in images}

    categories = []
    for i, rec in enumerate(_require(data, "categories", "$")):
        where = f"categories[{i}]"
        categories.append(
            Category(
                id=int(_require(rec, "id", where)),
                name=str(rec.get("name", "")),
                is_tail=bool(rec.get("is_tail", False)),
                extra={k: v for k, v in rec.items() if k not in _CAT_KEYS},
            )
        )

    annotations = []
    for i, rec in enumerate(_require(data, "annotations", "$")):
        where = f"annotations[{i}]"
        image_id = int(_require(rec, "image_id", where))
        if image_id not in sizes:
            raise SchemaError(f"{where}.image_id", f"unknown image {image_id}")
        x, y, w, h = _parse_bbox(_require(rec, "bbox", where), f"{where}.bbox")
        if not (w > 0 and h > 0 and all(np.isfinite((x, y, w, h)))):
            raise SchemaError(f"{where}.bbox", f"degenerate box {[x, y, w, h]}")
        box = clamp_box(BBox(x, y, w, h), sizes[image_id])
        if box is None:
            raise SchemaError(f"{where}.bbox", "box lies outside its image")
        annotations.append(
            Annotation(
                id=int(_require(rec, "id", where)),
                bbox=box,
                category_id=int(_require(rec, "category_id", where)),
                image_id=image_id,
                extra={k: v for k, v in rec.items() if k not in _ANN_KEYS},
            )
        )
    extra = {k: v for k, v in data.items() if k not in ("images", "annotations", "categories")}
    return DatasetIndex(images, annotations, categories, extra)


def dataset_to_coco(ds: DatasetIndex) -> dict[str, Any]:
    out: dict[str, Any] = dict(ds.extra)
    out["images"] = [
        {"id": im.id, "width": im.width, "height": im.height, "file_name": im.file_path, **im.extra}
        for im in ds.images
    ]
    out["annotations"] = [
        {
            "id": a.id,
            "image_id": a.image_id,
            "category_id": a.category_id,
            "bbox": a.bbox.tolist(),
            "area": a.area,
            **a.extra,
        }
        for a in ds.annotations
    ]
    out["categories"] = [
        {"id": c.id, "name": c.name, "is_tail": c.is_tail, **c.extra} for c in ds.categories
    ]
    return out


def load_coco(path: PathLike) -> DatasetIndex:
    with open(path) as fh:
        return dataset_from_coco(json.load(fh))


def save_coco(ds: DatasetIndex, path: PathLike) -> None:
    write_json(dataset_to_coco(ds), path)


def write_json(obj: Any, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=False)
        fh.write("\n")


def load_detections(path: PathLike) -> list[dict[str, Any]]:
    """Read a detection file and validate each record's schema.

    Returns raw dicts so callers can use extra keys such as ``region``.
    """
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise SchemaError("$", "expected a JSON array of detections")
    for i, rec in enumerate(data):
        where = f"[{i}]"
        for key in ("image_id", "category_id", "score"):
            _require(rec, key, where)
        x, y, w, h = _parse_bbox(_require(rec, "bbox", where), f"{where}.bbox")
        if not (w > 0 and h > 0):
            raise SchemaError(f"{where}.bbox", "degenerate box")
        if not 0.0 <= float(rec["score"]) <= 1.0:
            raise SchemaError(f"{where}.score", "score outside [0, 1]")
    return data


def detections_from_records(records: Iterable[dict[str, Any]]) -> list[Detection]:
    return [Detection.from_json(r) for r in records]


def save_detections(dets: Iterable[Detection], path: PathLike) -> None:
    write_json([d.to_json() for d in dets], path)


def read_jsonl(path: PathLike) -> list[dict[str, Any]]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_jsonl(records: Iterable[dict[str, Any]], path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def read_image(path: PathLike) -> np.ndarray:
    """Load an image as an ``(H, W, 3)`` uint8 RGB array."""
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise FileNotFoundError(f"cannot read image {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def write_image(pixels: np.ndarray, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), cv2.cvtColor(pixels, cv2.COLOR_RGB2BGR)):
        raise OSError(f"cannot write image {path}")

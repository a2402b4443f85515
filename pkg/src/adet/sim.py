"""Seeded synthetic aerial scenes and a parametric mock detector.

Scenes are flat-colored rectangles on a textured background, with long-tailed
class frequencies and a small-object-heavy size mix. Each scene also carries a
stride-8 logit tensor that is hot over small objects, standing in for a
detector's high-resolution classification head.

The mock detector's recall is a logistic function of the apparent object side
(true side times the input upscale factor), so enlarging crops around small
objects raises their recall.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Sequence

import cv2
import numpy as np

from adet.asoe import SubRegion
from adet.core import Annotation, BBox, Category, DatasetIndex, Detection, ImageRecord, clamp_box, size_bucket
from adet.heatmap import ActivationTensor

log = logging.getLogger(__name__)

VISDRONE_CLASSES = (
    "pedestrian", "people", "bicycle", "car", "van",
    "truck", "tricycle", "awning-tricycle", "bus", "motor",
)
VISDRONE_HEAD = ("pedestrian", "people", "car")
UAVDT_CLASSES = ("car", "truck", "bus")
UAVDT_TAIL = ("truck", "bus")

# head classes take 72% of instances, each tail class 2-7%
DEFAULT_CLASS_FREQS = (0.22, 0.10, 0.03, 0.40, 0.07, 0.04, 0.03, 0.02, 0.02, 0.07)
# small / medium / large instance mix
DEFAULT_SIZE_FRACS = (0.605, 0.34, 0.055)

_PALETTE = np.array(
    [
        [230, 60, 60], [240, 160, 40], [60, 200, 90], [50, 110, 230], [200, 80, 220],
        [250, 240, 70], [40, 220, 220], [150, 90, 40], [255, 255, 255], [120, 240, 150],
    ],
    dtype=np.int16,
)


@dataclass(frozen=True)
class SceneConfig:
    width: int = 800
    height: int = 600
    n_objects: tuple[int, int] = (20, 40)
    class_names: tuple[str, ...] = VISDRONE_CLASSES
    class_freqs: tuple[float, ...] = DEFAULT_CLASS_FREQS
    tail_classes: tuple[str, ...] = tuple(c for c in VISDRONE_CLASSES if c not in VISDRONE_HEAD)
    size_fracs: tuple[float, float, float] = DEFAULT_SIZE_FRACS
    # side length ranges in pixels per size bucket; area = side**2
    small_side: tuple[float, float] = (8.0, 32.0)
    medium_side: tuple[float, float] = (32.0, 96.0)
    large_side: tuple[float, float] = (96.0, 160.0)
    max_aspect: float = 2.0
    max_attempts: int = 1000
    layer: int = 3
    heatmap_channels: int = 4
    hot_logit: float = 3.0
    cold_logit: float = -3.0
    logit_noise: float = 0.75
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.class_freqs) != len(self.class_names):
            raise ValueError("class_freqs and class_names differ in length")
        if not math.isclose(sum(self.class_freqs), 1.0, abs_tol=1e-9):
            raise ValueError(f"class frequencies sum to {sum(self.class_freqs)}, not 1")
        if not math.isclose(sum(self.size_fracs), 1.0, abs_tol=1e-9):
            raise ValueError(f"size fractions sum to {sum(self.size_fracs)}, not 1")


@dataclass(frozen=True)
class MockDetectorConfig:
    recall_midpoint: float = 32.0
    recall_slope: float = 0.15  # per pixel of apparent side
    loc_noise: float = 0.05  # sigma as a fraction of box size
    tp_score_mean: float = 0.7
    tp_score_std: float = 0.15
    fp_score: tuple[float, float] = (0.05, 0.6)
    fp_side: tuple[float, float] = (8.0, 64.0)  # apparent pixels
    fp_rate: float = 2.0  # Poisson mean per detector call
    min_visible: float = 0.5
    recall_override: float | None = None  # force a constant detection probability
    n_classes: int = len(VISDRONE_CLASSES)  # false positives draw categories 1..n_classes
    seed: int = 0

    def __post_init__(self) -> None:
        if self.recall_slope <= 0:
            raise ValueError("recall_slope must be positive so recall increases with size")

    def recall(self, side: float | np.ndarray) -> float | np.ndarray:
        if self.recall_override is not None:
            return np.full_like(np.asarray(side, dtype=np.float64), self.recall_override)
        return 1.0 / (1.0 + np.exp(-self.recall_slope * (np.asarray(side) - self.recall_midpoint)))


@dataclass(eq=False)
class Scene:
    image: ImageRecord
    annotations: list[Annotation]
    pixels: np.ndarray
    tensor: ActivationTensor
    dropped: int = 0


def categories_for(cfg: SceneConfig) -> list[Category]:
    return [
        Category(i + 1, name, name in cfg.tail_classes) for i, name in enumerate(cfg.class_names)
    ]


def scene_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def _sample_box_dims(rng: np.random.Generator, cfg: SceneConfig, bucket: int) -> tuple[int, int]:
    lo, hi = (cfg.small_side, cfg.medium_side, cfg.large_side)[bucket]
    want = ("small", "medium", "large")[bucket]
    for _ in range(100):
        side = rng.uniform(lo, hi)
        aspect = math.exp(rng.uniform(-math.log(cfg.max_aspect), math.log(cfg.max_aspect)) / 2)
        w = max(2, int(round(side * aspect)))
        h = max(2, int(round(side / aspect)))
        if size_bucket(float(w * h)) == want:
            return w, h
    side = int(round((lo + hi) / 2))
    return side, side


def _background(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    coarse = rng.normal(0.0, 1.0, size=(max(2, height // 40), max(2, width // 40), 3))
    smooth = cv2.resize(coarse, (width, height), interpolation=cv2.INTER_CUBIC)
    fine = rng.normal(0.0, 1.0, size=(height, width, 3))
    img = 95.0 + 18.0 * smooth + 6.0 * fine
    return np.clip(img, 0, 255).astype(np.uint8)


def generate_scene(cfg: SceneConfig = SceneConfig(), image_id: int = 1, file_path: str = "") -> Scene:
    """Place non-overlapping objects, render them and emit a matching logit tensor.

    Objects whose placement fails ``max_attempts`` times are dropped and
    counted in ``Scene.dropped``.
    """
    rng = np.random.default_rng(cfg.seed)
    W, H = cfg.width, cfg.height
    n = int(rng.integers(cfg.n_objects[0], cfg.n_objects[1] + 1))
    freqs = np.asarray(cfg.class_freqs, dtype=np.float64)
    classes = rng.choice(len(freqs), size=n, p=freqs / freqs.sum())
    buckets = rng.choice(3, size=n, p=np.asarray(cfg.size_fracs, dtype=np.float64))

    placed: list[tuple[int, int, int, int, int]] = []
    occupied = np.zeros((H, W), dtype=bool)
    dropped = 0
    for cls, bucket in zip(classes, buckets):
        w, h = _sample_box_dims(rng, cfg, int(bucket))
        if w > W or h > H:
            dropped += 1
            continue
        for _ in range(cfg.max_attempts):
            x = int(rng.integers(0, W - w + 1))
            y = int(rng.integers(0, H - h + 1))
            if not occupied[y : y + h, x : x + w].any():
                occupied[y : y + h, x : x + w] = True
                placed.append((x, y, w, h, int(cls)))
                break
        else:
            dropped += 1
    if dropped:
        log.warning("scene seed %d: dropped %d objects after placement saturation", cfg.seed, dropped)

    pixels = _background(rng, W, H)
    anns = []
    for k, (x, y, w, h, cls) in enumerate(placed):
        color = _PALETTE[cls % len(_PALETTE)] + rng.integers(-15, 16, size=3)
        pixels[y : y + h, x : x + w] = np.clip(color, 0, 255).astype(np.uint8)
        anns.append(Annotation(image_id * 10000 + k + 1, BBox(x, y, w, h), cls + 1, image_id))

    stride = 2**cfg.layer
    gh, gw = math.ceil(H / stride), math.ceil(W / stride)
    hot = np.zeros((gh, gw), dtype=bool)
    for a in anns:
        if size_bucket(a) != "small":
            continue
        b = a.bbox
        i0, i1 = int(b.y) // stride, math.ceil(b.y2 / stride)
        j0, j1 = int(b.x) // stride, math.ceil(b.x2 / stride)
        hot[i0:i1, j0:j1] = True
    noise = rng.uniform(-cfg.logit_noise, cfg.logit_noise, size=(cfg.heatmap_channels, gh, gw))
    logits = np.where(hot[None], cfg.hot_logit, cfg.cold_logit) + noise
    # stored as float32 in ADHM files; keep the in-memory copy identical
    logits = logits.astype(np.float32).astype(np.float64)
    tensor = ActivationTensor(logits, layer=cfg.layer, image_id=image_id)
    image = ImageRecord(image_id, W, H, file_path)
    return Scene(image, anns, pixels, tensor, dropped)


def generate_scenes(cfg: SceneConfig, n_scenes: int, master_seed: int | None = None) -> list[Scene]:
    """``n_scenes`` scenes with image ids 1..n; scene ``i`` seeds from ``(master_seed, i)``."""
    master = cfg.seed if master_seed is None else master_seed
    return [
        generate_scene(replace(cfg, seed=scene_seed(master, i)), i, f"images/{i:06d}.png")
        for i in range(1, n_scenes + 1)
    ]


def scenes_to_dataset(scenes: Sequence[Scene], cfg: SceneConfig = SceneConfig()) -> DatasetIndex:
    return DatasetIndex(
        [s.image for s in scenes],
        [a for s in scenes for a in s.annotations],
        categories_for(cfg),
    )


def mock_detect(
    scene: Scene,
    region: SubRegion | None = None,
    cfg: MockDetectorConfig = MockDetectorConfig(),
) -> list[Detection]:
    """Simulated detector output for the whole image or one upscaled subregion.

    Region detections are expressed in the resized subregion frame, i.e.
    ``(global - rect origin) * region.scale``; full-image detections are in
    image pixels.
    """
    if region is None:
        frame, scale, stream = scene.image.bounds, 1.0, 0
    else:
        frame, scale, stream = region.rect, region.scale, region.cluster_id + 1
    rng = np.random.default_rng([cfg.seed, scene.image.id, stream])
    fw, fh = frame.w * scale, frame.h * scale
    extent = BBox(0.0, 0.0, fw, fh)

    out = []
    for ann in scene.annotations:
        # fixed number of draws per object keeps streams aligned across configs
        u, ncx, ncy, nw, nh, ns = rng.random(), *rng.normal(size=5)
        vis = clamp_box(ann.bbox, frame)
        if vis is None or vis.area < cfg.min_visible * ann.area:
            continue
        side = math.sqrt(vis.area) * scale
        if u >= float(cfg.recall(side)):
            continue
        w, h = vis.w * scale, vis.h * scale
        cx = (vis.center[0] - frame.x) * scale + cfg.loc_noise * w * ncx
        cy = (vis.center[1] - frame.y) * scale + cfg.loc_noise * h * ncy
        w *= math.exp(cfg.loc_noise * nw)
        h *= math.exp(cfg.loc_noise * nh)
        box = clamp_box(BBox(cx - w / 2, cy - h / 2, w, h), extent)
        if box is None:
            continue
        score = float(np.clip(cfg.tp_score_mean + cfg.tp_score_std * ns, 0.01, 1.0))
        out.append(Detection(box, ann.category_id, score, scene.image.id))

    for _ in range(int(rng.poisson(cfg.fp_rate))):
        side = rng.uniform(*cfg.fp_side)
        x, y = rng.uniform(0, max(fw - side, 0.0)), rng.uniform(0, max(fh - side, 0.0))
        box = clamp_box(BBox(x, y, side, side), extent)
        cat = int(rng.integers(1, cfg.n_classes + 1))
        score = float(rng.uniform(*cfg.fp_score))
        if box is not None:
            out.append(Detection(box, cat, score, scene.image.id))
    return out

"""Coarse-to-fine small-object detection toolkit for aerial imagery.

Subregion proposal from classification-head activations, class-balanced
copy-paste for tail classes, coarse/fine detection fusion, COCO-style
evaluation, and a seeded synthetic benchmark with a mock detector.
"""

from adet.asoe import AsoeConfig, Cluster, SubRegion, cluster_positions, generate_subregions, regions_from_clusters
from adet.core import (
    Annotation,
    BBox,
    Category,
    DatasetIndex,
    Detection,
    ImageRecord,
    clamp_box,
    iou,
    size_bucket,
)
from adet.evaluation import EvalReport, evaluate
from adet.fusion import FusionConfig, fuse, nms, remap_to_global
from adet.heatmap import ActivationMap, ActivationTensor, PositionSet, activation_map, filter_positions

__version__ = "0.1.0"

__all__ = [
    "ActivationMap",
    "ActivationTensor",
    "Annotation",
    "AsoeConfig",
    "BBox",
    "Category",
    "Cluster",
    "DatasetIndex",
    "Detection",
    "EvalReport",
    "FusionConfig",
    "ImageRecord",
    "PositionSet",
    "SubRegion",
    "activation_map",
    "clamp_box",
    "cluster_positions",
    "evaluate",
    "filter_positions",
    "fuse",
    "generate_subregions",
    "iou",
    "nms",
    "regions_from_clusters",
    "remap_to_global",
    "size_bucket",
]

"""Pipeline configuration: one nested key-value tree, loaded from YAML or JSON.

Layout of a config file (every key optional, defaults shown)::

    asoe:
      layer: 3                 # pyramid level l; stride 2**l
      gamma: 0.5               # activation threshold
      n: 4                     # max subregions per image (3 for UAVDT-style data)
      pad: 16                  # pixels added around each cluster
      min_side: 64             # minimum subregion side in pixels
      fine_input_long_side: 1333
      seed: 0
    dcc:
      capacity: 10             # memory bank size per tail class
      expand: 1.5              # context expansion when cropping instances
      budget: 2                # pastes per subregion
      tail_classes: null       # ids or names; null uses the dataset's is_tail flags
      seed: 0
      augment: {scale: [0.8, 1.2], rotate: [-15, 15], shift: [-0.05, 0.05],
                brightness: [-0.2, 0.2], contrast: [-0.2, 0.2]}
    fusion:
      nms_iou: 0.5
      max_detections: 500
      score_floor: 0.0
    eval:
      max_detections: 500
    bench:
      n_scenes: 100
      seed: 0
      overlays: 4              # scenes rendered as overlay images
      scene: {...}             # SceneConfig fields
      detector: {...}          # MockDetectorConfig fields

Precedence is command-line flag over config file over default.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, field
from typing import Any

import yaml

from adet.asoe import AsoeConfig
from adet.dcc import AugmentConfig, DccConfig
from adet.fusion import FusionConfig
from adet.sim import MockDetectorConfig, SceneConfig


@dataclass(frozen=True)
class EvalConfig:
    max_detections: int = 500


@dataclass(frozen=True)
class BenchConfig:
    n_scenes: int = 100
    seed: int = 0
    overlays: int = 4
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector: MockDetectorConfig = field(default_factory=MockDetectorConfig)


@dataclass(frozen=True)
class PipelineConfig:
    asoe: AsoeConfig = field(default_factory=AsoeConfig)
    dcc: DccConfig = field(default_factory=DccConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    bench: BenchConfig = field(default_factory=BenchConfig)


class ConfigError(ValueError):
    pass


def _coerce(tp: Any, value: Any, where: str) -> Any:
    if dataclasses.is_dataclass(tp):
        return build(tp, value, where)
    origin = typing.get_origin(tp)
    if origin is tuple and value is not None:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{where}: expected a list")
        return tuple(value)
    if tp is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    return value


def build(cls: type, data: dict[str, Any] | None, where: str = "") -> Any:
    """Instantiate dataclass ``cls`` from a (partial) nested dict."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{where or '<root>'}: expected a mapping")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where or '<root>'}: unknown keys {unknown}")
    kwargs = {k: _coerce(hints[k], v, f"{where}.{k}".lstrip(".")) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or '<root>'}: {exc}") from None


def to_dict(cfg: Any) -> dict[str, Any]:
    def conv(v: Any) -> Any:
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        if isinstance(v, list):
            return [conv(x) for x in v]
        return v

    return conv(dataclasses.asdict(cfg))


def deep_merge(base: dict[str, Any], override: dict[str, Any]) -> dict[str, Any]:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(
    path: str | os.PathLike | None = None, overrides: dict[str, Any] | None = None
) -> PipelineConfig:
    """Defaults, then the file at ``path``, then ``overrides`` (nested dict)."""
    data: dict[str, Any] = {}
    if path is not None:
        with open(path) as fh:
            loaded = yaml.safe_load(fh)
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
        data = loaded or {}
    if overrides:
        data = deep_merge(data, overrides)
    return build(PipelineConfig, data)


__all__ = [
    "AsoeConfig",
    "AugmentConfig",
    "BenchConfig",
    "ConfigError",
    "DccConfig",
    "EvalConfig",
    "FusionConfig",
    "MockDetectorConfig",
    "PipelineConfig",
    "SceneConfig",
    "load_config",
]

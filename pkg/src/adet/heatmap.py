"""Classification-head activation maps and interest positions.

Also home of the ``ADHM`` v1 binary heatmap format::

    offset  size  field
    0       4     magic b"ADHM"
    4       1     version (u8, = 1)
    5       1     pyramid level l (u8)
    6       4     image id (u32)
    10      4     channels C (u32)
    14      4     height H (u32)
    18      4     width W (u32)
    22      4*CHW float32 values, channel-major, row-major within a channel

All integers and floats are little-endian.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import expit

MAGIC = b"ADHM"
VERSION = 1
_HEADER = struct.Struct("<4sBBIIII")
HEADER_SIZE = _HEADER.size


class HeatmapFormatError(ValueError):
    def __init__(self, message: str, source: str = "<bytes>", offset: int = 0) -> None:
        super().__init__(f"{source}: byte {offset}: {message}")
        self.source = source
        self.offset = offset


@dataclass(frozen=True, eq=False)
class ActivationTensor:
    """Logits ``F_l`` of shape ``(C, H, W)`` taken from a detector's classification head."""

    data: np.ndarray
    layer: int = 3
    image_id: int = 0

    def __post_init__(self) -> None:
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"activation tensor must be (C, H, W) with C, H, W >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("activation tensor contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def stride(self) -> int:
        return 2**self.layer


@dataclass(frozen=True, eq=False)
class ActivationMap:
    values: np.ndarray  # (H, W), each in [0, 1]
    layer: int = 3
    image_id: int = 0

    @property
    def stride(self) -> int:
        return 2**self.layer


@dataclass(frozen=True, eq=False)
class PositionSet:
    """Interest positions as an ``(N, 2)`` int array of ``(x, y)`` image pixels."""

    positions: np.ndarray
    layer: int = 3
    image_id: int = 0

    def __len__(self) -> int:
        return len(self.positions)


def activation_map(F: ActivationTensor, pre_activated: bool = False) -> ActivationMap:
    """Per-cell mean over channels of ``sigmoid(F)``.

    With ``pre_activated`` the tensor is taken to hold probabilities already
    and is averaged as is.
    """
    if pre_activated:
        probs = F.data
        if probs.min() < 0.0 or probs.max() > 1.0:
            raise ValueError("pre-activated tensor values must lie in [0, 1]")
    else:
        probs = expit(F.data)
    return ActivationMap(probs.mean(axis=0), layer=F.layer, image_id=F.image_id)


def filter_positions(V: ActivationMap, gamma: float = 0.5) -> PositionSet:
    """Cells with ``V > gamma`` mapped to image pixels ``(j * 2**l, i * 2**l)``.

    Output is in row-major cell order.
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    rows, cols = np.nonzero(V.values > gamma)
    pos = np.stack([cols, rows], axis=1).astype(np.int64) * V.stride
    return PositionSet(pos.reshape(-1, 2), layer=V.layer, image_id=V.image_id)


def encode_adhm(F: ActivationTensor) -> bytes:
    header = _HEADER.pack(MAGIC, VERSION, F.layer, F.image_id, F.channels, F.height, F.width)
    return header + np.ascontiguousarray(F.data, dtype="<f4").tobytes()


def decode_adhm(buf: bytes, source: str = "<bytes>") -> ActivationTensor:
    if len(buf) < HEADER_SIZE:
        raise HeatmapFormatError(
            f"truncated header ({len(buf)} of {HEADER_SIZE} bytes)", source, len(buf)
        )
    magic, version, layer, image_id, c, h, w = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise HeatmapFormatError(f"bad magic {magic!r}, expected {MAGIC!r}", source, 0)
    if version != VERSION:
        raise HeatmapFormatError(f"unsupported version {version}", source, 4)
    if min(c, h, w) < 1:
        raise HeatmapFormatError(f"empty tensor shape ({c}, {h}, {w})", source, 10)
    expected = HEADER_SIZE + 4 * c * h * w
    if len(buf) != expected:
        raise HeatmapFormatError(
            f"payload length mismatch: file has {len(buf)} bytes, header implies {expected}",
            source,
            min(len(buf), expected),
        )
    data = np.frombuffer(buf, dtype="<f4", offset=HEADER_SIZE).reshape(c, h, w)
    bad = np.flatnonzero(~np.isfinite(data))
    if bad.size:
        raise HeatmapFormatError(
            f"non-finite value at element {bad[0]}", source, HEADER_SIZE + 4 * int(bad[0])
        )
    return ActivationTensor(data.astype(np.float64), layer=layer, image_id=image_id)


def read_adhm(path: str | os.PathLike) -> ActivationTensor:
    with open(path, "rb") as fh:
        return decode_adhm(fh.read(), source=str(path))


def write_adhm(F: ActivationTensor, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_adhm(F))

"""
VOL1 volume files.

Layout (little-endian):
    b"VOL1" | u8 kind | u32 dims[3] (D, H, W) | f32 spacing[3] | f32 voxels, C order
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Union

import numpy as np

from errors import FormatError, ValidationError
from preprocess import Volume, VolumeKind

MAGIC = b"VOL1"
HEADER = struct.Struct("<4sB3I3f")


def encode_volume(volume: Volume) -> bytes:
    header = HEADER.pack(MAGIC, int(volume.kind), *volume.dims, *volume.spacing)
    return header + volume.data.astype("<f4", copy=False).tobytes(order="C")


def decode_volume(blob: bytes, source: str = "<bytes>") -> Volume:
    if len(blob) < HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(blob)} bytes)")
    magic, kind, d, h, w, sz, sy, sx = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    try:
        kind = VolumeKind(kind)
    except ValueError as exc:
        raise FormatError(f"{source}: unknown volume kind {kind}") from exc
    expected = HEADER.size + 4 * d * h * w
    if len(blob) != expected:
        raise FormatError(f"{source}: expected {expected} bytes for dims {(d, h, w)}, found {len(blob)}")
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER.size).reshape(d, h, w)
    try:
        return Volume(data.astype(np.float32), (sz, sy, sx), kind)
    except ValidationError as exc:
        raise FormatError(f"{source}: {exc}") from exc


def write_volume(path: Union[str, Path], volume: Volume) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_volume(volume))
    return path


def read_volume(path: Union[str, Path]) -> Volume:
    path = Path(path)
    return decode_volume(path.read_bytes(), str(path))

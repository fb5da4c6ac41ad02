"""
Model checkpoints.

Binary file (little-endian):
    u32 entry count
    per entry: u32 name length | UTF-8 name | u32 rank | u32 dims[rank] | f32 payload
Parameters come first (model order), then batch-norm buffers.

A JSON sidecar `<path>.json` describes the architecture so the model can be
rebuilt before the tensors are filled in.
"""

from __future__ import annotations

import json
import logging
import struct
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

import numpy as np

from config import VERSION
from errors import FormatError
from model import BaseConfig, BaseInput, FusionSpec, Model, build_base, build_fused

logger = logging.getLogger(__name__)

_U32 = struct.Struct("<I")


def sidecar_path(path: Union[str, Path]) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def describe(model: Model) -> Dict[str, Any]:
    if model.spec is not None:
        return {
            "kind": "fused",
            "spec": model.spec.to_dict(),
            "base": model.base.to_dict(),
            "source": None,
            "version": VERSION,
        }
    return {
        "kind": "base",
        "spec": None,
        "base": model.base.to_dict(),
        "source": model.source.value,
        "version": VERSION,
    }


def _entries(model: Model) -> List[Tuple[str, np.ndarray]]:
    entries = [(p.name, p.tensor.data) for p in model.parameters()]
    entries += list(model.buffers().items())
    return entries


def encode_tensors(entries: List[Tuple[str, np.ndarray]]) -> bytes:
    chunks = [_U32.pack(len(entries))]
    for name, array in entries:
        raw_name = name.encode("utf-8")
        chunks.append(_U32.pack(len(raw_name)))
        chunks.append(raw_name)
        chunks.append(_U32.pack(array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}I", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    return b"".join(chunks)


def _read(blob: bytes, offset: int, size: int, source: str) -> Tuple[bytes, int]:
    end = offset + size
    if end > len(blob):
        raise FormatError(f"{source}: truncated at byte {offset}")
    return blob[offset:end], end


def decode_tensors(blob: bytes, source: str = "<bytes>") -> Iterator[Tuple[str, np.ndarray]]:
    raw, offset = _read(blob, 0, 4, source)
    (count,) = _U32.unpack(raw)
    for _ in range(count):
        raw, offset = _read(blob, offset, 4, source)
        (name_len,) = _U32.unpack(raw)
        raw, offset = _read(blob, offset, name_len, source)
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise FormatError(f"{source}: entry name is not UTF-8") from exc
        raw, offset = _read(blob, offset, 4, source)
        (rank,) = _U32.unpack(raw)
        raw, offset = _read(blob, offset, 4 * rank, source)
        shape = struct.unpack(f"<{rank}I", raw)
        raw, offset = _read(blob, offset, 4 * int(np.prod(shape, dtype=np.int64)), source)
        yield name, np.frombuffer(raw, dtype="<f4").reshape(shape)
    if offset != len(blob):
        raise FormatError(f"{source}: {len(blob) - offset} trailing bytes")


def save_checkpoint(model: Model, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_tensors(_entries(model)))
    sidecar_path(path).write_text(json.dumps(describe(model), indent=2, sort_keys=True), encoding="utf-8")
    logger.info(f"[checkpoint] saved {model.name} -> {path}")
    return path


def build_from_description(meta: Dict[str, Any]) -> Model:
    try:
        if meta["kind"] == "fused":
            return build_fused(FusionSpec.from_dict(meta["spec"]))
        if meta["kind"] == "base":
            source = BaseInput(meta["source"])
            in_channels = 2 if source is BaseInput.EARLY else 1
            return build_base(BaseConfig.from_dict(meta["base"]), in_channels, source)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint description: {exc}") from exc
    raise FormatError(f"unknown checkpoint kind {meta.get('kind')!r}")


def load_checkpoint(path: Union[str, Path]) -> Model:
    path = Path(path)
    meta_path = sidecar_path(path)
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{meta_path}: not valid JSON ({exc})") from exc
    model = build_from_description(meta)

    params = model.named_parameters()
    buffers = model.buffers()
    seen = set()
    for name, array in decode_tensors(path.read_bytes(), str(path)):
        if name in params:
            target = params[name].tensor.data
        elif name in buffers:
            target = buffers[name]
        else:
            raise FormatError(f"{path}: unexpected entry {name!r} for {model.name}")
        if target.shape != array.shape:
            raise FormatError(f"{path}: {name} has shape {array.shape}, model expects {target.shape}")
        target[...] = array
        seen.add(name)
    missing = sorted((set(params) | set(buffers)) - seen)
    if missing:
        raise FormatError(f"{path}: missing entries {missing}")
    return model.eval()

"""Flat little-endian binary container for parameter arrays.

Layout: magic ``b"LPSW"``, uint32 version, uint32 array count, then for each
array a uint32 rank, one uint64 per dimension, and the row-major float64
values.  Architecture metadata lives in a JSON sidecar next to the file.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .base_model import BaseModel, MlpConfig
from .flow import FlowModel

MAGIC = b"LPSW"
VERSION = 1


class WeightFormatError(ValueError):
    pass


def save_weights(path, arrays: list[np.ndarray]) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for a in arrays:
        a = np.asarray(a, dtype="<f8")  # tobytes() is row-major; keeps 0-d shapes
        parts.append(struct.pack("<I", a.ndim))
        parts.append(struct.pack(f"<{a.ndim}Q", *a.shape))
        parts.append(a.tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_weights(path) -> list[np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise WeightFormatError(f"{path}: bad magic")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise WeightFormatError(f"{path}: unsupported version {version}")
        off = 12
        arrays = []
        for _ in range(count):
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", buf, off)
            off += 8 * ndim
            n = int(np.prod(shape)) if ndim else 1
            if off + 8 * n > len(buf):
                raise WeightFormatError(f"{path}: truncated array data")
            arrays.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off)
                          .reshape(shape).astype(np.float64))
            off += 8 * n
    except struct.error as exc:
        raise WeightFormatError(f"{path}: truncated header ({exc})") from None
    if off != len(buf):
        raise WeightFormatError(f"{path}: {len(buf) - off} trailing bytes")
    return arrays


def _sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def _assign(params, arrays, path) -> None:
    if len(params) != len(arrays) or any(p.shape != a.shape for p, a in zip(params, arrays)):
        raise WeightFormatError(f"{path}: arrays do not match the model architecture")
    for p, a in zip(params, arrays):
        p.data[...] = a


def save_model(path, model) -> None:
    """Write weights plus a ``<path>.json`` architecture sidecar."""
    if isinstance(model, FlowModel):
        meta = {"kind": "flow", **model.config}
    else:
        meta = {"kind": "mlp", **model.config.to_dict()}
    save_weights(path, [p.data for p in model.parameters()])
    _sidecar(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_model(path):
    try:
        meta = json.loads(_sidecar(path).read_text())
    except json.JSONDecodeError as exc:
        raise WeightFormatError(f"{_sidecar(path)}: {exc}") from None
    arrays = load_weights(path)
    kind = meta.pop("kind", None)
    if kind == "flow":
        model = FlowModel(**meta)
    elif kind == "mlp":
        model = BaseModel(MlpConfig(**meta), np.random.default_rng(0))
    else:
        raise WeightFormatError(f"{_sidecar(path)}: unknown model kind {kind!r}")
    _assign(model.parameters(), arrays, path)
    return model

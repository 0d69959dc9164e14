"""Versioned binary checkpoints.

    magic b"DYDTCKPT" | u32 version | u64 param_count
    per parameter: u32 name_len | utf-8 name | u32 rank | u32 dims[rank] | f64 data

Architecture and delta ride along as the reserved parameters `meta.arch`
and `meta.delta` (the latter only once calibrated).
"""
from __future__ import annotations

import logging
import os
import struct
from typing import Dict

import numpy as np

from .cascade import CascadeModel, build_model
from .features import ArchConfig

log = logging.getLogger("dydet.detector.checkpoint")

MAGIC = b"DYDTCKPT"
VERSION = 1
_ARCH_FIELDS = ("image_size", "num_levels", "base_channels", "stem_channels", "num_classes")


class CheckpointError(ValueError):
    """Unreadable or incompatible checkpoint."""


def _tensors(model: CascadeModel) -> Dict[str, np.ndarray]:
    out = dict(model.named_params())
    out["meta.arch"] = np.array([getattr(model.arch, f) for f in _ARCH_FIELDS], dtype=np.float64)
    if model.delta is not None:
        out["meta.delta"] = np.array([model.delta], dtype=np.float64)
    return out


def encode_checkpoint(model: CascadeModel) -> bytes:
    tensors = _tensors(model)
    parts = [MAGIC, struct.pack("<IQ", VERSION, len(tensors))]
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(arr.tobytes())
    return b"".join(parts)


def decode_tensors(buf: bytes) -> Dict[str, np.ndarray]:
    if buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a dydet checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<IQ", buf, len(MAGIC))
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = len(MAGIC) + 12
        out = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<I", buf, off)
            off += 4
            dims = struct.unpack_from(f"<{rank}I", buf, off)
            off += 4 * rank
            size = int(np.prod(dims, dtype=np.int64))
            if off + 8 * size > len(buf):
                raise CheckpointError(f"truncated data for {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=off).reshape(dims).astype(np.float64)
            off += 8 * size
    except struct.error as e:
        raise CheckpointError(f"truncated checkpoint: {e}") from e
    if off != len(buf):
        raise CheckpointError(f"{len(buf) - off} trailing bytes after the last parameter")
    return out


def save_checkpoint(model: CascadeModel, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    data = encode_checkpoint(model)
    with open(path, "wb") as f:
        f.write(data)
    log.info("checkpoint_saved", extra={"context": {"path": path, "bytes": len(data)}})


def load_checkpoint(path: str) -> CascadeModel:
    if not os.path.exists(path):
        raise FileNotFoundError(f"checkpoint not found at {path}")
    with open(path, "rb") as f:
        tensors = decode_tensors(f.read())
    if "meta.arch" not in tensors:
        raise CheckpointError(f"{path}: missing meta.arch")
    arch = ArchConfig(**{k: int(v) for k, v in zip(_ARCH_FIELDS, tensors.pop("meta.arch"))})
    delta = tensors.pop("meta.delta", None)
    model = build_model(arch, seed=0)
    params = model.named_params()
    if set(params) != set(tensors):
        missing = sorted(set(params) - set(tensors))
        extra = sorted(set(tensors) - set(params))
        raise CheckpointError(f"{path}: parameter mismatch, missing {missing[:3]}, unexpected {extra[:3]}")
    for name, arr in tensors.items():
        if params[name].shape != arr.shape:
            raise CheckpointError(f"{path}: {name} has shape {arr.shape}, expected {params[name].shape}")
        params[name][...] = arr
    model.delta = None if delta is None else float(delta[0])
    return model

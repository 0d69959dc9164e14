"""On-disk scene datasets.

A dataset is a directory holding `manifest.json` and one binary record per
scene. Record layout, little-endian:

    u64 scene_id | u32 image_size | u32 num_boxes
    f32 pixels[image_size * image_size]   (row-major)
    f32 boxes[num_boxes * 4]              (cx, cy, w, h)
    u32 classes[num_boxes]
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List

import numpy as np

from .scene import SceneConfig, SyntheticScene, generate_scene

log = logging.getLogger("dydet.shapes.dataset")

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.json"
_HEADER = struct.Struct("<QII")


class DatasetError(ValueError):
    """Malformed dataset directory or record."""


@dataclass
class Dataset:
    path: str
    manifest: Dict[str, Any]
    scenes: List[SyntheticScene]

    @property
    def dataset_id(self) -> str:
        return self.manifest.get("dataset_id", "")

    def __len__(self) -> int:
        return len(self.scenes)


def encode_scene(scene: SyntheticScene) -> bytes:
    size = scene.image_size
    n = scene.num_objects
    return b"".join([
        _HEADER.pack(scene.scene_id, size, n),
        np.asarray(scene.image, dtype="<f4").reshape(size * size).tobytes(),
        np.asarray(scene.boxes, dtype="<f4").reshape(n * 4).tobytes(),
        np.asarray(scene.classes, dtype="<u4").tobytes(),
    ])


def decode_scene(buf: bytes, dropped_objects: int = 0) -> SyntheticScene:
    if len(buf) < _HEADER.size:
        raise DatasetError("record shorter than its header")
    scene_id, size, n = _HEADER.unpack_from(buf)
    want = _HEADER.size + 4 * (size * size + 4 * n + n)
    if len(buf) != want:
        raise DatasetError(f"scene {scene_id}: record has {len(buf)} bytes, expected {want}")
    off = _HEADER.size
    pixels = np.frombuffer(buf, dtype="<f4", count=size * size, offset=off)
    off += 4 * size * size
    boxes = np.frombuffer(buf, dtype="<f4", count=4 * n, offset=off).reshape(n, 4)
    off += 16 * n
    classes = np.frombuffer(buf, dtype="<u4", count=n, offset=off)
    if n and (boxes[:, 2:] <= 0).any():
        raise DatasetError(f"scene {scene_id}: degenerate box with non-positive width or height")
    return SyntheticScene(
        image=pixels.astype(np.float64).reshape(1, size, size),
        boxes=boxes.astype(np.float64),
        classes=classes.astype(np.int64),
        scene_id=int(scene_id),
        dropped_objects=int(dropped_objects),
    )


def write_dataset(scenes: List[SyntheticScene], config: SceneConfig, seed: int, path: str) -> Dict[str, Any]:
    os.makedirs(path, exist_ok=True)
    records = []
    for i, scene in enumerate(scenes):
        name = f"scene_{i:06d}.bin"
        data = encode_scene(scene)
        with open(os.path.join(path, name), "wb") as f:
            f.write(data)
        records.append({
            "scene_id": scene.scene_id,
            "file": name,
            "num_boxes": scene.num_objects,
            "dropped_objects": scene.dropped_objects,
            "sha256": hashlib.sha256(data).hexdigest(),
        })
    manifest = {
        "version": FORMAT_VERSION,
        "config": config.to_dict(),
        "seed": int(seed),
        "count": len(scenes),
        "scenes": records,
    }
    manifest["dataset_id"] = hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()[:16]
    with open(os.path.join(path, MANIFEST_NAME), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def generate_dataset(config: SceneConfig, n: int, seed: int, path: str, workers: int = 1) -> Dict[str, Any]:
    """Generate `n` scenes with per-scene seeds `seed + index` and write them to `path`."""
    if n <= 0:
        raise ValueError(f"n must be >= 1, got {n}")
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            scenes = list(pool.map(lambda i: generate_scene(config, seed + i), range(n)))
    else:
        scenes = [generate_scene(config, seed + i) for i in range(n)]
    manifest = write_dataset(scenes, config, seed, path)
    log.info("dataset_written", extra={"context": {
        "path": path, "count": n, "seed": seed, "dataset_id": manifest["dataset_id"],
        "truncated": sum(s.truncated for s in scenes),
    }})
    return manifest


def load_manifest(path: str) -> Dict[str, Any]:
    mpath = os.path.join(path, MANIFEST_NAME)
    if not os.path.exists(mpath):
        raise FileNotFoundError(f"dataset manifest not found at {mpath}. Run: python -m dydet gen-data")
    with open(mpath) as f:
        manifest = json.load(f)
    if manifest.get("version") != FORMAT_VERSION:
        raise DatasetError(f"{path}: unsupported dataset version {manifest.get('version')!r}")
    if manifest.get("count") != len(manifest.get("scenes", [])):
        raise DatasetError(f"{path}: manifest count does not match its scene list")
    return manifest


def load_dataset(path: str, verify: bool = False) -> Dataset:
    manifest = load_manifest(path)
    scenes = []
    for rec in manifest["scenes"]:
        fpath = os.path.join(path, rec["file"])
        with open(fpath, "rb") as f:
            data = f.read()
        if verify and hashlib.sha256(data).hexdigest() != rec["sha256"]:
            raise DatasetError(f"{fpath}: content hash mismatch")
        scene = decode_scene(data, rec.get("dropped_objects", 0))
        if scene.scene_id != rec["scene_id"]:
            raise DatasetError(f"{fpath}: scene_id {scene.scene_id} does not match manifest {rec['scene_id']}")
        scenes.append(scene)
    return Dataset(path=path, manifest=manifest, scenes=scenes)

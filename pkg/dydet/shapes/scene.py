"""Synthetic detection scenes: filled shapes on a noisy grey background.

Difficulty is not stored anywhere. Scenes with more, smaller and more
occluded objects under stronger noise are simply harder to detect.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Tuple

import numpy as np

from ..boxes import iou_matrix

log = logging.getLogger("dydet.shapes.scene")

SHAPE_NAMES = ("rectangle", "disk", "triangle")
PLACEMENT_ATTEMPTS = 100
# box coordinates are snapped to this grid so they survive float32 storage
_GRID = 16.0


@dataclass(frozen=True)
class SceneConfig:
    image_size: int = 64
    num_objects_range: Tuple[int, int] = (1, 6)
    size_range: Tuple[float, float] = (0.1, 0.4)
    max_overlap_iou: float = 0.3
    noise_sigma: float = 0.1
    num_classes: int = 3

    def __post_init__(self):
        object.__setattr__(self, "num_objects_range", tuple(int(v) for v in self.num_objects_range))
        object.__setattr__(self, "size_range", tuple(float(v) for v in self.size_range))
        lo, hi = self.num_objects_range
        if not 0 <= lo <= hi:
            raise ValueError(f"num_objects_range must satisfy 0 <= min <= max, got {self.num_objects_range}")
        slo, shi = self.size_range
        if not 0 < slo <= shi <= 1:
            raise ValueError(f"size_range must satisfy 0 < min <= max <= 1, got {self.size_range}")
        if self.image_size < 32:
            raise ValueError(f"image_size must be >= 32, got {self.image_size}")
        if not 0 <= self.max_overlap_iou <= 1:
            raise ValueError(f"max_overlap_iou must be in [0, 1], got {self.max_overlap_iou}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["num_objects_range"] = list(self.num_objects_range)
        d["size_range"] = list(self.size_range)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "SceneConfig":
        return cls(**d)


@dataclass
class SyntheticScene:
    image: np.ndarray      # [1, S, S], values in [0, 1]
    boxes: np.ndarray      # [N, 4] (cx, cy, w, h) pixels
    classes: np.ndarray    # [N]
    scene_id: int
    dropped_objects: int = field(default=0)

    @property
    def image_size(self) -> int:
        return int(self.image.shape[-1])

    @property
    def num_objects(self) -> int:
        return int(len(self.classes))

    @property
    def truncated(self) -> bool:
        return self.dropped_objects > 0


def _snap(v: float) -> float:
    return float(np.round(v * _GRID) / _GRID)


def _mask(kind: int, box, xx: np.ndarray, yy: np.ndarray) -> np.ndarray:
    cx, cy, w, h = box
    if kind == 0:
        return (np.abs(xx - cx) <= w / 2) & (np.abs(yy - cy) <= h / 2)
    if kind == 1:
        return ((xx - cx) / (w / 2)) ** 2 + ((yy - cy) / (h / 2)) ** 2 <= 1.0
    top = cy - h / 2
    frac = (yy - top) / h
    return (frac >= 0) & (frac <= 1) & (np.abs(xx - cx) <= frac * w / 2)


def generate_scene(config: SceneConfig, seed: int) -> SyntheticScene:
    """Deterministic scene for (config, seed); `scene_id` is the seed."""
    rng = np.random.default_rng(seed)
    S = config.image_size
    lo, hi = config.num_objects_range
    wanted = int(rng.integers(lo, hi + 1))
    boxes, classes, dropped = [], [], 0
    for _ in range(wanted):
        placed = None
        for _ in range(PLACEMENT_ATTEMPTS):
            side = max(_snap(rng.uniform(*config.size_range) * S), 1.0 / _GRID)
            cx = _snap(rng.uniform(side / 2, S - side / 2))
            cy = _snap(rng.uniform(side / 2, S - side / 2))
            cand = np.array([cx, cy, side, side])
            if boxes and iou_matrix(cand, np.array(boxes)).max() > config.max_overlap_iou:
                continue
            placed = cand
            break
        if placed is None:
            dropped += 1
            continue
        boxes.append(placed)
        classes.append(int(rng.integers(0, config.num_classes)))

    yy, xx = np.mgrid[0:S, 0:S] + 0.5
    img = np.zeros((S, S), dtype=np.float64)
    for box, cls in zip(boxes, classes):
        # classes past the three base shapes reuse them at a dimmer intensity band
        band = cls // len(SHAPE_NAMES)
        value = rng.uniform(0.6, 1.0) / (1 + band)
        img[_mask(cls % len(SHAPE_NAMES), box, xx, yy)] = value
    if config.noise_sigma > 0:
        img = img + rng.normal(0.0, config.noise_sigma, size=img.shape)
    img = np.clip(img, 0.0, 1.0).astype(np.float32).astype(np.float64)

    if dropped:
        log.debug("placement_dropped", extra={"context": {"scene_id": seed, "dropped": dropped}})
    return SyntheticScene(
        image=img[None],
        boxes=np.array(boxes, dtype=np.float64).reshape(-1, 4),
        classes=np.array(classes, dtype=np.int64),
        scene_id=int(seed),
        dropped_objects=dropped,
    )

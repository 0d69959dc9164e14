"""Architecture hyper-parameters and the tensors flowing between stages."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Tuple

import numpy as np

from ..nn.layers import ShapeError


@dataclass(frozen=True)
class ArchConfig:
    image_size: int = 64
    num_levels: int = 3
    base_channels: int = 8
    stem_channels: int = 16
    num_classes: int = 3

    def __post_init__(self):
        if self.num_levels < 1:
            raise ValueError(f"num_levels must be >= 1, got {self.num_levels}")
        coarsest = 4 * 2 ** (self.num_levels - 1)
        if self.image_size % coarsest:
            raise ValueError(f"image_size {self.image_size} is not divisible by the coarsest stride {coarsest}")
        if self.base_channels < 1 or self.stem_channels < 1:
            raise ValueError("channel counts must be positive")
        if self.num_classes < 1:
            raise ValueError(f"num_classes must be >= 1, got {self.num_classes}")

    def channels(self, level: int) -> int:
        return self.base_channels * 2 ** level

    def stride(self, level: int) -> int:
        return 4 * 2 ** level

    def side(self, level: int) -> int:
        return self.image_size // self.stride(level)

    def level_shape(self, level: int) -> Tuple[int, int, int]:
        return (self.channels(level), self.side(level), self.side(level))

    @property
    def pooled_dim(self) -> int:
        return sum(self.channels(l) for l in range(self.num_levels))

    @property
    def num_outputs(self) -> int:
        return 5 + self.num_classes

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "ArchConfig":
        return cls(**d)


@dataclass
class MultiScaleFeatures:
    levels: List[np.ndarray]

    def __len__(self) -> int:
        return len(self.levels)

    @property
    def shapes(self) -> List[Tuple[int, ...]]:
        return [tuple(f.shape) for f in self.levels]

    def check(self, arch: ArchConfig, what: str = "features") -> None:
        want = [arch.level_shape(l) for l in range(arch.num_levels)]
        if self.shapes != want:
            raise ShapeError(f"{what}: expected pyramid {want}, got {self.shapes}")


@dataclass
class RawPredictions:
    """Per level `[5 + K, h, w]`: objectness logit, (dx, dy, log w, log h), class logits."""

    levels: List[np.ndarray]
    image_size: int

    def stride(self, level: int) -> float:
        return self.image_size / self.levels[level].shape[-1]

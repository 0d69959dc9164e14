"""Convolutional backbone producing the multi-scale pyramid.

Stem: 3x3 s1 (1 -> s), 3x3 s1 (s -> s), 3x3 s2 (s -> s). Then for every level
a 3x3 s2 conv into that level's channel count followed by a 3x3 s1 conv, all
with ReLU. Level l therefore sits at stride 4 * 2**l.

The second backbone of the cascade adds the composite embedding `h` to each
stage output before the next stage consumes it.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..nn.layers import Conv3x3, ElementwiseAdd, Layer, ReLU, ShapeError
from .features import ArchConfig, MultiScaleFeatures


class BackboneCache:
    __slots__ = ("stem_inputs", "stage_inputs", "embed_inputs", "with_h")

    def __init__(self):
        self.stem_inputs: List[np.ndarray] = []
        self.stage_inputs: List[List[np.ndarray]] = []
        self.embed_inputs: List[Tuple[np.ndarray, np.ndarray]] = []
        self.with_h = False


class Backbone:
    def __init__(self, arch: ArchConfig, name: str = "b1", rng: Optional[np.random.Generator] = None):
        self.arch, self.name = arch, name
        s = arch.stem_channels
        self.stem: List[Layer] = [
            Conv3x3(1, s, 1, f"{name}.stem0", rng), ReLU(),
            Conv3x3(s, s, 1, f"{name}.stem1", rng), ReLU(),
            Conv3x3(s, s, 2, f"{name}.stem2", rng), ReLU(),
        ]
        self.stages: List[List[Layer]] = []
        prev = s
        for l in range(arch.num_levels):
            c = arch.channels(l)
            self.stages.append([
                Conv3x3(prev, c, 2, f"{name}.stage{l}.conv0", rng), ReLU(),
                Conv3x3(c, c, 1, f"{name}.stage{l}.conv1", rng), ReLU(),
            ])
            prev = c
        # pyramid level l = stage output + embedding level l
        self.embed = [ElementwiseAdd(f"{name}.embed{l}") for l in range(arch.num_levels)]

    def layers(self) -> List[Layer]:
        return self.stem + [layer for stage in self.stages for layer in stage]

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in self.layers() for k, v in layer.params.items()}

    def forward(self, x: np.ndarray, h: Optional[MultiScaleFeatures] = None) -> Tuple[MultiScaleFeatures, BackboneCache]:
        want = (1, self.arch.image_size, self.arch.image_size)
        if tuple(x.shape) != want:
            raise ShapeError(f"{self.name}: expected image shape {want}, got {tuple(x.shape)}")
        if h is not None:
            h.check(self.arch, f"{self.name} embedding")
        cache = BackboneCache()
        cache.with_h = h is not None
        out = x
        for layer in self.stem:
            cache.stem_inputs.append(out)
            out = layer.forward(out)
        levels = []
        for l, stage in enumerate(self.stages):
            inputs = []
            for layer in stage:
                inputs.append(out)
                out = layer.forward(out)
            if h is not None:
                pair = (out, h.levels[l])
                cache.embed_inputs.append(pair)
                out = self.embed[l].forward(pair)
            cache.stage_inputs.append(inputs)
            levels.append(out)
        return MultiScaleFeatures(levels), cache

    def backward(self, cache: BackboneCache, grad_levels: Sequence[Optional[np.ndarray]]):
        """Returns (grad_x, grads, grad_h); grad_h is None unless forward got `h`."""
        grads: Dict[str, np.ndarray] = {}
        grad_h: List[np.ndarray] = [None] * len(self.stages)
        g = None
        for l in reversed(range(len(self.stages))):
            gl = grad_levels[l]
            if gl is None:
                gl = np.zeros(self.arch.level_shape(l))
            g = gl if g is None else g + gl
            if cache.with_h:
                (g, grad_h[l]), _ = self.embed[l].backward(cache.embed_inputs[l], g)
            for layer, x in zip(reversed(self.stages[l]), reversed(cache.stage_inputs[l])):
                g, gp = layer.backward(x, g)
                for k, v in gp.items():
                    grads[f"{layer.name}.{k}"] = v
        for layer, x in zip(reversed(self.stem), reversed(cache.stem_inputs)):
            g, gp = layer.backward(x, g)
            for k, v in gp.items():
                grads[f"{layer.name}.{k}"] = v
        return g, grads, (grad_h if cache.with_h else None)

    def macs(self) -> int:
        shape = (1, self.arch.image_size, self.arch.image_size)
        total = 0
        for layer in self.layers():
            total += layer.macs(shape)
            shape = layer.output_shape(shape)
        return total

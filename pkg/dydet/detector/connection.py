"""Composite connection G: embeds the first pyramid for the second backbone.

For target level l, every source level j >= l is projected to level l's
channel count with a bias-free 1x1 map, upsampled by 2**(j - l) with nearest
neighbour and summed. Projection commutes with nearest upsampling, so it is
applied at the coarser resolution.
"""
from __future__ import annotations

from typing import Dict, List, Optional, Tuple

import numpy as np

from ..nn.layers import Linear, Upsample
from .features import ArchConfig, MultiScaleFeatures


class CompositeConnection:
    def __init__(self, arch: ArchConfig, name: str = "g", rng: Optional[np.random.Generator] = None):
        self.arch, self.name = arch, name
        self.proj: Dict[Tuple[int, int], Linear] = {}
        self.up: Dict[Tuple[int, int], Upsample] = {}
        for l in range(arch.num_levels):
            for j in range(l, arch.num_levels):
                self.proj[l, j] = Linear(arch.channels(j), arch.channels(l), bias=False,
                                         name=f"{name}.to{l}.from{j}", rng=rng)
                self.up[l, j] = Upsample(2 ** (j - l))

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{p.name}.weight": p.params["weight"] for p in self.proj.values()}

    def zero_(self) -> None:
        for p in self.proj.values():
            p.params["weight"][...] = 0.0

    def forward(self, f1: MultiScaleFeatures):
        f1.check(self.arch, "composite connection input")
        projected = {}
        levels = []
        for l in range(self.arch.num_levels):
            acc = np.zeros(self.arch.level_shape(l))
            for j in range(l, self.arch.num_levels):
                p = self.proj[l, j].forward(f1.levels[j])
                projected[l, j] = p
                acc += self.up[l, j].forward(p)
            levels.append(acc)
        return MultiScaleFeatures(levels), (f1, projected)

    def backward(self, cache, grad_h: List[np.ndarray]):
        f1, projected = cache
        grad_f1 = [np.zeros_like(f) for f in f1.levels]
        grads = {}
        for (l, j), proj in self.proj.items():
            gp, _ = self.up[l, j].backward(projected[l, j], grad_h[l])
            gx, gw = proj.backward(f1.levels[j], gp)
            grad_f1[j] += gx
            grads[f"{proj.name}.weight"] = gw["weight"]
        return grad_f1, grads

    def macs(self) -> int:
        return sum(p.macs(self.arch.level_shape(j)) for (l, j), p in self.proj.items())

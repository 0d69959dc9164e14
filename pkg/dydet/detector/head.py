"""Per-level detection head: 3x3 conv + ReLU, then a 1x1 map to 5 + K outputs."""
from __future__ import annotations

from typing import Dict, List, Optional

import numpy as np

from ..nn.layers import Conv3x3, Linear, ReLU
from .features import ArchConfig, MultiScaleFeatures, RawPredictions

# initial objectness prior of 1%
OBJECTNESS_PRIOR_BIAS = -4.595


class Head:
    def __init__(self, arch: ArchConfig, name: str = "d1", rng: Optional[np.random.Generator] = None):
        self.arch, self.name = arch, name
        self.levels = []
        for l in range(arch.num_levels):
            c = arch.channels(l)
            out = Linear(c, arch.num_outputs, name=f"{name}.l{l}.out", rng=rng)
            if rng is not None:
                out.params["bias"][0] = OBJECTNESS_PRIOR_BIAS
            self.levels.append([Conv3x3(c, c, 1, f"{name}.l{l}.conv", rng), ReLU(), out])

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for level in self.levels for layer in level for k, v in layer.params.items()}

    def forward(self, f: MultiScaleFeatures):
        f.check(self.arch, f"{self.name} input")
        outs, cache = [], []
        for l, layers in enumerate(self.levels):
            x, inputs = f.levels[l], []
            for layer in layers:
                inputs.append(x)
                x = layer.forward(x)
            outs.append(x)
            cache.append(inputs)
        return RawPredictions(outs, self.arch.image_size), cache

    def backward(self, cache, grad_pred: List[np.ndarray]):
        grad_f, grads = [], {}
        for layers, inputs, g in zip(self.levels, cache, grad_pred):
            for layer, x in zip(reversed(layers), reversed(inputs)):
                g, gp = layer.backward(x, g)
                for k, v in gp.items():
                    grads[f"{layer.name}.{k}"] = v
            grad_f.append(g)
        return grad_f, grads

    def macs(self) -> int:
        total = 0
        for l, layers in enumerate(self.levels):
            shape = self.arch.level_shape(l)
            for layer in layers:
                total += layer.macs(shape)
                shape = layer.output_shape(shape)
        return total

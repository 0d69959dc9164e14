"""Adaptive router: pooled first-pyramid descriptor -> difficulty score phi.

    phi = sigmoid(W2 relu(W1 p + b1) + b2),   p = concat of per-level channel means

The router only ever sees the first backbone's features, and its gradient is
never pushed back into them.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from ..nn.layers import GlobalAvgPool, Linear, ReLU, ShapeError, Sigmoid
from .features import MultiScaleFeatures

_POOL = GlobalAvgPool()
_RELU = ReLU()
_SIGMOID = Sigmoid()
# keeps phi strictly inside (0, 1) in float64
_PHI_EPS = 2.0 ** -52


class RouterCacheError(RuntimeError):
    """Backward requested without the cache of a matching forward pass."""


def pool_concat(f1: MultiScaleFeatures) -> np.ndarray:
    return np.concatenate([_POOL.forward(f) for f in f1.levels])


@dataclass
class RouterCache:
    pooled: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    phi: float


class Router:
    def __init__(self, d: int, name: str = "r", rng: Optional[np.random.Generator] = None):
        hidden = d // 4
        if hidden < 1:
            raise ValueError(f"pooled dimension {d} is too small for a d/4 hidden layer")
        self.d, self.hidden, self.name = d, hidden, name
        self.fc1 = Linear(d, hidden, name=f"{name}.fc1", rng=rng)
        self.fc2 = Linear(hidden, 1, name=f"{name}.fc2", rng=rng)

    def params(self) -> Dict[str, np.ndarray]:
        return {f"{layer.name}.{k}": v for layer in (self.fc1, self.fc2) for k, v in layer.params.items()}

    def forward(self, pooled: np.ndarray):
        if pooled.shape != (self.d,):
            raise ShapeError(f"{self.name}: expected pooled vector of length {self.d}, got shape {pooled.shape}")
        z1 = self.fc1.forward(pooled)
        a1 = _RELU.forward(z1)
        z2 = self.fc2.forward(a1)
        phi = float(np.clip(_SIGMOID.forward(z2)[0], _PHI_EPS, 1.0 - _PHI_EPS))
        return phi, RouterCache(pooled, z1, a1, z2, phi)

    def score(self, pooled: np.ndarray) -> float:
        return self.forward(pooled)[0]

    def standardize_inputs(self, mean: np.ndarray, scale: np.ndarray) -> None:
        """Re-express fc1 in place for inputs (p - mean) / scale; phi is unchanged."""
        w, b = self.fc1.params["weight"], self.fc1.params["bias"]
        b += w @ mean
        w *= scale[None, :]

    def unstandardize_inputs(self, mean: np.ndarray, scale: np.ndarray) -> None:
        """Inverse of `standardize_inputs`: back to raw pooled vectors, same MACs."""
        w, b = self.fc1.params["weight"], self.fc1.params["bias"]
        w /= scale[None, :]
        b -= w @ mean

    def backward_logit(self, cache: Optional[RouterCache], grad_logit: float) -> Dict[str, np.ndarray]:
        """Gradient of a loss whose derivative w.r.t. the pre-sigmoid logit is `grad_logit`."""
        if cache is None:
            raise RouterCacheError(f"{self.name}: backward called before forward")
        g2 = np.array([grad_logit], dtype=np.float64)
        ga1, gp2 = self.fc2.backward(cache.a1, g2)
        gz1, _ = _RELU.backward(cache.z1, ga1)
        _, gp1 = self.fc1.backward(cache.pooled, gz1)
        grads = {f"{self.fc1.name}.{k}": v for k, v in gp1.items()}
        grads.update({f"{self.fc2.name}.{k}": v for k, v in gp2.items()})
        return grads

    def backward_phi(self, cache: Optional[RouterCache], grad_phi: float) -> Dict[str, np.ndarray]:
        if cache is None:
            raise RouterCacheError(f"{self.name}: backward called before forward")
        s = float(_SIGMOID.forward(cache.z2)[0])
        return self.backward_logit(cache, grad_phi * s * (1.0 - s))

    def backward(self, cache: Optional[RouterCache], coeff: float) -> Dict[str, np.ndarray]:
        """Offset-objective gradient: -(dphi/dtheta) * coeff, coeff = L1 - L2 - delta."""
        return self.backward_phi(cache, -coeff)

    def macs(self) -> int:
        return self.d * self.hidden + self.hidden + self.hidden + 1


class RandomScorer:
    """Uniform pseudo-random score keyed by seed and image content."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def score(self, pooled: np.ndarray) -> float:
        key = int.from_bytes(hashlib.sha256(np.ascontiguousarray(pooled).tobytes()).digest()[:8], "little")
        u = float(np.random.default_rng([self.seed, key]).random())
        return float(np.clip(u, _PHI_EPS, 1.0 - _PHI_EPS))

    def macs(self) -> int:
        return 0

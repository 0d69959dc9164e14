"""Central finite-difference checks for hand-written gradients."""
from __future__ import annotations

import math
from typing import Callable, Dict, Mapping, Optional

import numpy as np


class GradientCheckError(ArithmeticError):
    """The checked objective produced a non-finite value."""


def finite_diff_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    """Compare `analytic` against central differences of `f`.

    `f` takes no arguments and reads `params` by reference; each coordinate is
    nudged in place by +/- eps and restored. When `max_coords` is set, at most
    that many coordinates per tensor are drawn (seeded) instead of all of them.

    Returns max over checked coordinates of |analytic - numeric| / max(1, |numeric|).
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        g = np.asarray(analytic[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        if max_coords is not None and p.size > max_coords:
            coords = rng.choice(p.size, size=max_coords, replace=False)
        else:
            coords = range(p.size)
        for flat in coords:
            idx = np.unravel_index(int(flat), p.shape)
            orig = p[idx]
            p[idx] = orig + eps
            fp = float(f())
            p[idx] = orig - eps
            fm = float(f())
            p[idx] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise GradientCheckError(f"objective is not finite when perturbing {name}{list(idx)}")
            numeric = (fp - fm) / (2.0 * eps)
            worst = max(worst, abs(g[idx] - numeric) / max(1.0, abs(numeric)))
    return worst


def numeric_grads(f: Callable[[], float], params: Dict[str, np.ndarray], eps: float = 1e-5) -> Dict[str, np.ndarray]:
    """Full central-difference gradient; only for small parameter sets."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for flat in range(p.size):
            idx = np.unravel_index(flat, p.shape)
            orig = p[idx]
            p[idx] = orig + eps
            fp = float(f())
            p[idx] = orig - eps
            fm = float(f())
            p[idx] = orig
            g[idx] = (fp - fm) / (2.0 * eps)
        out[name] = g
    return out

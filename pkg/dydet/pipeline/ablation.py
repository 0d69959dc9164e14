"""Router training baselines for comparison with the offset objective.

unconstrained   (1 - phi) L1 + phi L2
lambda-penalty  (1 - phi) L1 + phi L2 + lambda * phi
random          seeded uniform scorer, no training
ap-based        label hard when L1 - L2 exceeds its median, fit with BCE
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from ..detector.cascade import CascadeModel
from ..detector.router import RandomScorer, Router
from ..shapes.scene import SyntheticScene
from .train import (DeltaOffset, RouterSample, TrainConfig, TrainHistory, calibrate_delta, fit_router, lower_median,
                    router_samples, train_router)

log = logging.getLogger("dydet.pipeline.ablation")

STRATEGIES = ("proposed", "unconstrained", "lambda-penalty", "random", "ap-based")
# CLI spelling
STRATEGY_ALIASES = {"lambda": "lambda-penalty"}


@dataclass(frozen=True)
class AblationConfig:
    strategy: str = "proposed"
    lam: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", STRATEGY_ALIASES.get(self.strategy, self.strategy))
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; expected one of {STRATEGIES}")
        if self.strategy == "lambda-penalty":
            if self.lam is None or self.lam < 0:
                raise ValueError("lambda-penalty needs lambda >= 0")
        elif self.lam is not None:
            raise ValueError(f"lambda is only meaningful for lambda-penalty, not {self.strategy!r}")


@dataclass
class AblationResult:
    scorer: Union[Router, RandomScorer]
    history: TrainHistory
    labels: Optional[np.ndarray] = None


def _bce(phi: float, y: float) -> float:
    return float(-(y * np.log(phi) + (1.0 - y) * np.log1p(-phi)))


def train_router_ablation(model: CascadeModel, scenes: Sequence[SyntheticScene], ab: AblationConfig,
                          config: TrainConfig, samples: Optional[Sequence[RouterSample]] = None,
                          log_path: Optional[str] = None) -> AblationResult:
    """Train a freshly initialised router (seeded by `config.seed`) with strategy `ab`."""
    if ab.strategy == "random":
        return AblationResult(RandomScorer(config.seed), TrainHistory())
    if samples is None:
        samples = router_samples(model, scenes)
    router = Router(model.arch.pooled_dim, rng=np.random.default_rng(config.seed))
    log.info("ablation_start", extra={"context": {"strategy": ab.strategy, "lam": ab.lam, "samples": len(samples)}})

    if ab.strategy == "proposed":
        if model.delta is None:
            delta = calibrate_delta(model, scenes, samples=samples)
        else:
            delta = DeltaOffset(model.delta, "model", len(samples))
        hist = train_router(model, delta, scenes, config, router=router, samples=samples, log_path=log_path)
        return AblationResult(router, hist)

    if ab.strategy in ("unconstrained", "lambda-penalty"):
        lam = ab.lam or 0.0
        hist = fit_router(
            router, samples,
            grad_fn=lambda cache, phi, s: router.backward_phi(cache, s.l2 - s.l1 + lam),
            loss_fn=lambda phi, s: (1.0 - phi) * s.l1 + phi * s.l2 + lam * phi,
            config=config, phase=ab.strategy, log_path=log_path,
        )
        return AblationResult(router, hist)

    # ap-based: binary labels from the per-image loss improvement
    gap = lower_median([s.l1 - s.l2 for s in samples])
    labels = np.array([1.0 if s.l1 - s.l2 > gap else 0.0 for s in samples])
    label_of = {id(s): y for s, y in zip(samples, labels)}
    hist = fit_router(
        router, samples,
        grad_fn=lambda cache, phi, s: router.backward_logit(cache, phi - label_of[id(s)]),
        loss_fn=lambda phi, s: _bce(phi, label_of[id(s)]),
        config=config, phase=ab.strategy, log_path=log_path,
    )
    return AblationResult(router, hist, labels)

"""Two-phase optimisation.

Phase 1 trains both detectors and the connection jointly on L1 + L2.
Phase 2 freezes them, fixes delta = lower median of (L1 - L2) over the
training set and trains only the router on

    (1 - phi) * (L1 - delta / 2) + phi * (L2 + delta / 2)

whose gradient is -(dphi/dtheta) * (L1 - L2 - delta).
"""
from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..detector.cascade import CascadeModel, image_losses, joint_loss_and_grads
from ..detector.router import Router, RouterCache
from ..nn.optim import make_optimizer
from ..shapes.scene import SyntheticScene

log = logging.getLogger("dydet.pipeline.train")

OPTIMIZERS = ("sgd", "adamw")


class DivergenceError(FloatingPointError):
    def __init__(self, step: int, value: float):
        self.step = step
        super().__init__(f"non-finite loss {value} at optimizer step {step}")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    batch_size: int = 1
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0
    optimizer: str = "adamw"

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.lr > 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if self.weight_decay < 0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "TrainConfig":
        return cls(**d)


# desk-scale choices for the detector phase
DETECTOR_DEFAULTS = TrainConfig(epochs=8, batch_size=8, lr=2e-3, weight_decay=0.0, optimizer="adamw")
# COCO-scale router schedule: constant lr 1e-5, weight decay 5e-3, batch 1, 2 epochs
ROUTER_DEFAULTS = TrainConfig(epochs=2, batch_size=1, lr=1e-5, weight_decay=5e-3, optimizer="adamw")
# same schedule at desk scale; a few thousand lr-1e-5 steps leave phi within about 0.05 of its start
DESK_ROUTER_DEFAULTS = TrainConfig(epochs=4, batch_size=1, lr=1e-3, weight_decay=5e-3, optimizer="adamw")
# pooled dimensions with less spread than this are left unscaled
_MIN_INPUT_SCALE = 1e-12


@dataclass(frozen=True)
class DeltaOffset:
    delta: float
    computed_over: str
    size: int


@dataclass
class TrainHistory:
    steps: int = 0
    epoch_loss: List[float] = field(default_factory=list)
    epoch_phi: List[float] = field(default_factory=list)


@dataclass(frozen=True)
class RouterSample:
    """Frozen-detector quantities the router phase needs for one scene."""

    scene_id: int
    l1: float
    l2: float
    pooled: np.ndarray


class _CsvLog:
    def __init__(self, path: Optional[str], header: Sequence[str]):
        self._f = None
        if path:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            self._f = open(path, "w", newline="")
            self._w = csv.writer(self._f)
            self._w.writerow(header)

    def row(self, *values) -> None:
        if self._f:
            self._w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in values])

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        if self._f:
            self._f.close()


def _batches(n: int, batch_size: int, seed: int, epoch: int):
    order = np.random.default_rng([seed, epoch]).permutation(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]


def _mean_grads(acc: Dict[str, np.ndarray], g: Dict[str, np.ndarray], scale: float) -> None:
    for k, v in g.items():
        if k in acc:
            acc[k] += scale * v
        else:
            acc[k] = scale * v


def lower_median(values: Sequence[float]) -> float:
    if len(values) == 0:
        raise ValueError("median of an empty set")
    s = sorted(float(v) for v in values)
    return s[(len(s) - 1) // 2]


def train_detectors_joint(model: CascadeModel, scenes: Sequence[SyntheticScene], config: TrainConfig,
                          log_path: Optional[str] = None) -> TrainHistory:
    """Minimise L1 + L2 over B1, D1, G, B2, D2 in place."""
    if not scenes:
        raise ValueError("cannot train on an empty dataset")
    params = model.detector_params()
    opt = make_optimizer(config.optimizer, params, config.lr, config.weight_decay)
    hist = TrainHistory()
    with _CsvLog(log_path, ["step", "epoch", "l1", "l2", "loss"]) as out:
        for epoch in range(config.epochs):
            ep_total = 0.0
            for batch in _batches(len(scenes), config.batch_size, config.seed, epoch):
                acc: Dict[str, np.ndarray] = {}
                b1 = b2 = 0.0
                for i in batch:
                    l1, l2, g = joint_loss_and_grads(model, scenes[i])
                    loss = l1.total + l2.total
                    if not math.isfinite(loss):
                        log.error("divergence", extra={"context": {"step": hist.steps, "scene_id": scenes[i].scene_id}})
                        raise DivergenceError(hist.steps, loss)
                    _mean_grads(acc, g, 1.0 / len(batch))
                    b1 += l1.total / len(batch)
                    b2 += l2.total / len(batch)
                opt.step(acc)
                out.row(hist.steps, epoch, b1, b2, b1 + b2)
                hist.steps += 1
                ep_total += (b1 + b2) * len(batch)
            hist.epoch_loss.append(ep_total / len(scenes))
            log.info("epoch_done", extra={"context": {"phase": "detectors", "epoch": epoch,
                                                      "mean_loss": hist.epoch_loss[-1], "steps": hist.steps}})
    return hist


def router_samples(model: CascadeModel, scenes: Sequence[SyntheticScene], workers: int = 1) -> List[RouterSample]:
    def one(scene):
        l1, l2, pooled = image_losses(model, scene)
        return RouterSample(scene.scene_id, l1.total, l2.total, pooled)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(one, scenes))
    return [one(s) for s in scenes]


def calibrate_delta(model: CascadeModel, scenes: Sequence[SyntheticScene], dataset_id: str = "",
                    samples: Optional[Sequence[RouterSample]] = None) -> DeltaOffset:
    """Lower median of per-image L1 - L2 with frozen detectors; stored on the model."""
    if samples is None:
        if not scenes:
            raise ValueError("cannot calibrate delta on an empty dataset")
        samples = router_samples(model, scenes)
    if not samples:
        raise ValueError("cannot calibrate delta on an empty dataset")
    delta = lower_median([s.l1 - s.l2 for s in samples])
    model.delta = delta
    log.info("delta_calibrated", extra={"context": {"delta": delta, "dataset_id": dataset_id, "size": len(samples)}})
    return DeltaOffset(delta=delta, computed_over=dataset_id, size=len(samples))


# grad_fn(cache, phi, sample) -> router grads; loss_fn(phi, sample) -> scalar objective
GradFn = Callable[[RouterCache, float, RouterSample], Dict[str, np.ndarray]]
LossFn = Callable[[float, RouterSample], float]


def input_scale(samples: Sequence[RouterSample]) -> Tuple[np.ndarray, np.ndarray]:
    """Per-dimension mean and standard deviation of the pooled descriptors."""
    x = np.stack([s.pooled for s in samples])
    scale = x.std(axis=0)
    scale[scale < _MIN_INPUT_SCALE] = 1.0
    return x.mean(axis=0), scale


def fit_router(router: Router, samples: Sequence[RouterSample], grad_fn: GradFn, loss_fn: LossFn,
               config: TrainConfig, phase: str = "router", log_path: Optional[str] = None,
               standardize: bool = True) -> TrainHistory:
    """Generic router loop; samples are visited in a seeded order and updates applied serially.

    With `standardize`, optimisation runs on z-scored pooled descriptors: the
    router is re-expressed for standardized inputs first and folded back
    afterwards, so the trained router still takes raw descriptors.
    """
    if not samples:
        raise ValueError("cannot train the router on an empty dataset")
    if standardize:
        mean, scale = input_scale(samples)
        router.standardize_inputs(mean, scale)
        log.debug("router_inputs_standardized", extra={"context": {"phase": phase, "min_scale": float(scale.min()),
                                                                   "max_scale": float(scale.max())}})
    else:
        mean, scale = np.zeros(router.d), np.ones(router.d)
    try:
        return _fit_router(router, samples, grad_fn, loss_fn, config, phase, log_path, mean, scale)
    finally:
        if standardize:
            router.unstandardize_inputs(mean, scale)


def _fit_router(router, samples, grad_fn, loss_fn, config, phase, log_path, mean, scale) -> TrainHistory:
    opt = make_optimizer(config.optimizer, router.params(), config.lr, config.weight_decay)
    hist = TrainHistory()
    with _CsvLog(log_path, ["step", "epoch", "loss", "mean_phi"]) as out:
        for epoch in range(config.epochs):
            ep_loss = ep_phi = 0.0
            for batch in _batches(len(samples), config.batch_size, config.seed, epoch):
                acc: Dict[str, np.ndarray] = {}
                b_loss = b_phi = 0.0
                for i in batch:
                    s = samples[i]
                    phi, cache = router.forward((s.pooled - mean) / scale)
                    loss = loss_fn(phi, s)
                    if not math.isfinite(loss):
                        raise DivergenceError(hist.steps, loss)
                    _mean_grads(acc, grad_fn(cache, phi, s), 1.0 / len(batch))
                    b_loss += loss / len(batch)
                    b_phi += phi / len(batch)
                opt.step(acc)
                out.row(hist.steps, epoch, b_loss, b_phi)
                hist.steps += 1
                ep_loss += b_loss * len(batch)
                ep_phi += b_phi * len(batch)
            hist.epoch_loss.append(ep_loss / len(samples))
            hist.epoch_phi.append(ep_phi / len(samples))
            log.info("epoch_done", extra={"context": {"phase": phase, "epoch": epoch, "mean_loss": hist.epoch_loss[-1],
                                                      "mean_phi": hist.epoch_phi[-1], "steps": hist.steps}})
    return hist


def offset_objective(phi: float, l1: float, l2: float, delta: float) -> float:
    return (1.0 - phi) * (l1 - delta / 2.0) + phi * (l2 + delta / 2.0)


def train_router(model: CascadeModel, delta: DeltaOffset, scenes: Sequence[SyntheticScene], config: TrainConfig,
                 router: Optional[Router] = None, samples: Optional[Sequence[RouterSample]] = None,
                 log_path: Optional[str] = None) -> TrainHistory:
    """Train `router` (default: the model's) on the offset objective; detectors stay untouched."""
    router = router or model.router
    if samples is None:
        samples = router_samples(model, scenes)
    d = delta.delta
    return fit_router(
        router, samples,
        grad_fn=lambda cache, phi, s: router.backward(cache, s.l1 - s.l2 - d),
        loss_fn=lambda phi, s: offset_objective(phi, s.l1, s.l2, d),
        config=config, phase="router", log_path=log_path,
    )


@dataclass(frozen=True)
class LossCurveRecord:
    scene_id: int
    l1: float
    l2: float
    l1_adjusted: float
    l2_adjusted: float
    phi: float


def loss_curve_report(model: CascadeModel, delta: float, scenes: Sequence[SyntheticScene], path: Optional[str] = None,
                      scorer=None, samples: Optional[Sequence[RouterSample]] = None) -> List[LossCurveRecord]:
    """Per-image raw and offset-adjusted losses, sorted by L1 - L2 ascending."""
    scorer = scorer or model.router
    if samples is None:
        samples = router_samples(model, scenes)
    recs = [LossCurveRecord(s.scene_id, s.l1, s.l2, s.l1 - delta / 2.0, s.l2 + delta / 2.0, scorer.score(s.pooled))
            for s in samples]
    recs.sort(key=lambda r: (r.l1 - r.l2, r.scene_id))
    if path:
        with _CsvLog(path, ["scene_id", "l1", "l2", "l1_adjusted", "l2_adjusted", "phi"]) as out:
            for r in recs:
                out.row(r.scene_id, r.l1, r.l2, r.l1_adjusted, r.l2_adjusted, r.phi)
    return recs

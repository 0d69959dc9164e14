"""Dynamic inference and latency-driven threshold calibration.

An image is easy when phi <= tau and then only D1 runs on B1's pyramid;
otherwise G, B2 and D2 run as well. tau is the (1 - k)-quantile of validation
scores so that a fraction k of images takes the hard route.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..config import CONF_THRESH, LATENCY_RUNS, NMS_IOU
from ..detector.cascade import CascadeModel, count_flops
from ..detector.decode import Detection, decode_predictions
from ..detector.router import pool_concat
from ..shapes.scene import SyntheticScene

log = logging.getLogger("dydet.pipeline.inference")


@dataclass(frozen=True)
class RoutingDecision:
    phi: float
    tau: float
    route: str
    flops: int
    wall_time: float


@dataclass(frozen=True)
class ThresholdCalibration:
    k: float
    tau: float
    scores_source: str
    num_scores: int
    lat1: Optional[float] = None
    lat2: Optional[float] = None
    lat_t: Optional[float] = None


def route_for(phi: float, tau: float) -> str:
    return "easy" if phi <= tau else "hard"


def infer_dynamic(model: CascadeModel, tau: float, x: np.ndarray, scorer=None,
                  conf_thresh: float = CONF_THRESH, nms_iou: float = NMS_IOU) -> Tuple[List[Detection], RoutingDecision]:
    scorer = scorer or model.router
    t0 = time.perf_counter()
    f1 = model.first_pyramid(x)
    phi = scorer.score(pool_concat(f1))
    route = route_for(phi, tau)
    pred = model.easy_predictions(f1) if route == "easy" else model.hard_predictions(x, f1)
    dets = decode_predictions(pred, conf_thresh, nms_iou)
    wall = time.perf_counter() - t0
    return dets, RoutingDecision(phi, tau, route, count_flops(model, route), wall)


def compute_k(lat1: float, lat2: float, lat_t: float) -> float:
    """Largest hard fraction a latency budget allows."""
    if not lat1 < lat2:
        raise ValueError(f"need lat1 < lat2, got {lat1} and {lat2}")
    if not lat1 <= lat_t <= lat2:
        raise ValueError(f"target latency {lat_t} outside [{lat1}, {lat2}]")
    return (lat_t - lat1) / (lat2 - lat1)


def calibrate_threshold(scores: Sequence[float], k: float) -> float:
    """(1 - k)-quantile of `scores` with linear interpolation.

    k = 1 returns just below the minimum so that no score satisfies phi <= tau.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("cannot calibrate a threshold from an empty score list")
    if not 0.0 <= k <= 1.0:
        raise ValueError(f"k must be in [0, 1], got {k}")
    if k == 1.0:
        return float(np.nextafter(s.min(), -np.inf))
    return float(np.quantile(s, 1.0 - k, method="linear"))


def threshold_for_budget(scores: Sequence[float], lat1: float, lat2: float, lat_t: float,
                         scores_source: str = "") -> ThresholdCalibration:
    k = compute_k(lat1, lat2, lat_t)
    tau = calibrate_threshold(scores, k)
    log.info("threshold_calibrated", extra={"context": {"k": k, "tau": tau, "lat1": lat1, "lat2": lat2,
                                                        "lat_t": lat_t, "scores": len(scores)}})
    return ThresholdCalibration(k, tau, scores_source, len(scores), lat1, lat2, lat_t)


def score_scenes(model: CascadeModel, scenes: Sequence[SyntheticScene], scorer=None) -> np.ndarray:
    scorer = scorer or model.router
    return np.array([scorer.score(pool_concat(model.first_pyramid(s.image))) for s in scenes])


def measure_route_latency(model: CascadeModel, scenes: Sequence[SyntheticScene],
                          runs: int = LATENCY_RUNS) -> Tuple[float, float]:
    """Median wall time (seconds) of the easy and hard routes over at least `runs` executions each."""
    if not scenes:
        raise ValueError("need at least one scene to time")
    easy, hard = [], []
    i = 0
    while len(easy) < runs:
        x = scenes[i % len(scenes)].image
        easy.append(infer_dynamic(model, np.inf, x)[1].wall_time)
        hard.append(infer_dynamic(model, -np.inf, x)[1].wall_time)
        i += 1
    return float(np.median(easy)), float(np.median(hard))

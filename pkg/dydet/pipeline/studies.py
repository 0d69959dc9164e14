"""Experiments on a trained cascade: trade-off sweep, threshold robustness
and difficulty ranking. Each writes one CSV."""
from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy.stats import spearmanr

from ..config import CONF_THRESH, NMS_IOU
from ..detector.cascade import CascadeModel, count_flops
from ..detector.decode import Detection
from ..shapes.report import object_stats
from ..shapes.scene import SyntheticScene
from .evaluate import evaluate_ap
from .inference import calibrate_threshold, infer_dynamic, route_for, score_scenes

log = logging.getLogger("dydet.pipeline.studies")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: str, header: Sequence[str], rows) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


@dataclass(frozen=True)
class RouteOutcome:
    scene_id: int
    phi: float
    easy: List[Detection]
    hard: List[Detection]
    easy_time: Optional[float]
    hard_time: Optional[float]


def route_outcomes(model: CascadeModel, scenes: Sequence[SyntheticScene], scorer=None, measure_latency: bool = False,
                   conf_thresh: float = CONF_THRESH, nms_iou: float = NMS_IOU) -> List[RouteOutcome]:
    """Both routes' detections per scene, produced through `infer_dynamic` at its endpoints."""
    out = []
    for s in scenes:
        easy, de = infer_dynamic(model, np.inf, s.image, scorer, conf_thresh, nms_iou)
        hard, dh = infer_dynamic(model, -np.inf, s.image, scorer, conf_thresh, nms_iou)
        out.append(RouteOutcome(s.scene_id, de.phi, easy, hard,
                                de.wall_time if measure_latency else None,
                                dh.wall_time if measure_latency else None))
    return out


@dataclass(frozen=True)
class TradeOffPoint:
    k: float
    tau: float
    ap: float
    mean_flops: float
    mean_latency: Optional[float]
    observed_hard_fraction: float
    num_images: int
    num_hard: int
    total_flops: int


SWEEP_HEADER = ["k", "tau", "ap", "mean_flops", "mean_latency_ms", "hard_fraction"]


def sweep_tradeoff(model: CascadeModel, val_scenes: Sequence[SyntheticScene], eval_scenes: Sequence[SyntheticScene],
                   k_list: Sequence[float], scorer=None, measure_latency: bool = False,
                   conf_thresh: float = CONF_THRESH, nms_iou: float = NMS_IOU) -> List[TradeOffPoint]:
    """One row per k: tau from validation scores, AP and cost on the evaluation set.

    k = 0 and k = 1 use tau = +inf / -inf, i.e. exactly the single first
    detector and the full cascade.
    """
    if not eval_scenes:
        raise ValueError("sweep needs a non-empty evaluation set")
    val_scores = score_scenes(model, val_scenes, scorer)
    outcomes = route_outcomes(model, eval_scenes, scorer, measure_latency, conf_thresh, nms_iou)
    f_easy, f_hard = count_flops(model, "easy"), count_flops(model, "hard")
    n = len(eval_scenes)
    points = []
    for k in sorted(float(k) for k in k_list):
        if k == 0.0:
            tau = np.inf
        elif k == 1.0:
            tau = -np.inf
        else:
            tau = calibrate_threshold(val_scores, k)
        hard = [route_for(o.phi, tau) == "hard" for o in outcomes]
        dets = [o.hard if h else o.easy for o, h in zip(outcomes, hard)]
        num_hard = int(sum(hard))
        total = (n - num_hard) * f_easy + num_hard * f_hard
        latency = None
        if measure_latency:
            latency = float(np.mean([o.hard_time if h else o.easy_time for o, h in zip(outcomes, hard)]))
        ap = evaluate_ap(dets, eval_scenes, model.arch.num_classes).ap
        points.append(TradeOffPoint(k, float(tau), ap, total / n, latency, num_hard / n, n, num_hard, total))
        log.info("sweep_point", extra={"context": {"k": k, "tau": float(tau), "ap": ap, "hard_fraction": num_hard / n}})
    return points


def write_sweep_csv(points: Sequence[TradeOffPoint], path: str) -> None:
    _write_csv(path, SWEEP_HEADER, (
        (p.k, p.tau, p.ap, p.mean_flops, None if p.mean_latency is None else p.mean_latency * 1e3,
         p.observed_hard_fraction) for p in points))


@dataclass(frozen=True)
class RobustnessRow:
    val_size: int
    tau_val: float
    tau_ref: float
    abs_dev: float
    achieved_hard_fraction: float


def robustness_from_scores(pool_scores: Sequence[float], test_scores: Sequence[float], sizes: Sequence[int], k: float,
                           resamples: int = 10, seed: int = 0) -> List[RobustnessRow]:
    """Per validation size, means over `resamples` subsamples drawn without replacement."""
    pool = np.asarray(pool_scores, dtype=np.float64)
    test = np.asarray(test_scores, dtype=np.float64)
    tau_ref = calibrate_threshold(test, k)
    rng = np.random.default_rng(seed)
    rows = []
    for size in sizes:
        if size > len(pool):
            raise ValueError(f"validation size {size} exceeds pool of {len(pool)} scores")
        if size < 1:
            raise ValueError(f"validation size must be >= 1, got {size}")
        taus, devs, fracs = [], [], []
        for _ in range(resamples):
            tau = calibrate_threshold(pool[rng.choice(len(pool), size=size, replace=False)], k)
            taus.append(tau)
            devs.append(abs(tau - tau_ref))
            fracs.append(float(np.mean(test > tau)))
        rows.append(RobustnessRow(int(size), float(np.mean(taus)), tau_ref, float(np.mean(devs)), float(np.mean(fracs))))
    return rows


def threshold_robustness(model: CascadeModel, val_pool: Sequence[SyntheticScene], sizes: Sequence[int], k: float,
                         test_set: Sequence[SyntheticScene], resamples: int = 10, seed: int = 0,
                         scorer=None) -> List[RobustnessRow]:
    if max(sizes) > len(val_pool):
        raise ValueError(f"validation size {max(sizes)} exceeds pool of {len(val_pool)} scenes")
    rows = robustness_from_scores(score_scenes(model, val_pool, scorer), score_scenes(model, test_set, scorer),
                                  sizes, k, resamples, seed)
    for r in rows:
        log.info("robustness", extra={"context": {"val_size": r.val_size, "abs_dev": r.abs_dev,
                                                  "achieved_hard_fraction": r.achieved_hard_fraction}})
    return rows


def write_robustness_csv(rows: Sequence[RobustnessRow], path: str) -> None:
    _write_csv(path, ["val_size", "tau_val", "tau_ref", "abs_dev", "achieved_hard_fraction"],
               ((r.val_size, r.tau_val, r.tau_ref, r.abs_dev, r.achieved_hard_fraction) for r in rows))


@dataclass(frozen=True)
class DifficultyRow:
    scene_id: int
    phi: float
    num_objects: int
    mean_size: float
    max_pair_iou: float


@dataclass
class DifficultyReport:
    rows: List[DifficultyRow]
    easiest: List[DifficultyRow]
    hardest: List[DifficultyRow]
    spearman_rho: float
    spearman_p: float


def difficulty_report(model: CascadeModel, scenes: Sequence[SyntheticScene], n_extremes: int,
                      scorer=None) -> DifficultyReport:
    """Scenes ranked by phi ascending (ties by scene_id) with object statistics."""
    phis = score_scenes(model, scenes, scorer)
    rows = []
    for s, phi in zip(scenes, phis):
        st = object_stats(s)
        rows.append(DifficultyRow(s.scene_id, float(phi), st.num_objects, st.mean_size, st.max_pair_iou))
    rows.sort(key=lambda r: (r.phi, r.scene_id))
    counts = [r.num_objects for r in rows]
    if len(set(counts)) > 1 and len({r.phi for r in rows}) > 1:
        res = spearmanr([r.phi for r in rows], counts)
        rho, p = float(res[0]), float(res[1])
    else:
        rho, p = float("nan"), float("nan")
    log.info("difficulty_report", extra={"context": {"scenes": len(rows), "spearman_rho": rho, "p_value": p}})
    n = min(n_extremes, len(rows))
    return DifficultyReport(rows, rows[:n], rows[len(rows) - n:] if n else [], rho, p)


def write_difficulty_csv(report: DifficultyReport, path: str) -> None:
    _write_csv(path, ["scene_id", "phi", "num_objects", "mean_size", "max_pair_iou"],
               ((r.scene_id, r.phi, r.num_objects, r.mean_size, r.max_pair_iou) for r in report.rows))


def write_threshold_csv(scores: Sequence[float], k_list: Sequence[float], path: str) -> List[float]:
    """`k,tau` for each k, calibrated on `scores`."""
    taus = [calibrate_threshold(scores, k) for k in k_list]
    _write_csv(path, ["k", "tau"], zip((float(k) for k in k_list), taus))
    return taus


def flops_summary(model: CascadeModel) -> dict:
    easy, hard = count_flops(model, "easy"), count_flops(model, "hard")
    router = model.router.macs()
    return {"easy": easy, "hard": hard, "router": router, "router_over_easy": router / easy}

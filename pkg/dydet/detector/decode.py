from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import expit

from ..boxes import iou_matrix
from .coding import decode_box, deltas_from_raw
from .features import RawPredictions


@dataclass(frozen=True)
class Detection:
    box: Tuple[float, float, float, float]   # cx, cy, w, h
    cls: int
    score: float


def decode_predictions(pred: RawPredictions, conf_thresh: float = 0.5, nms_iou: float = 0.5) -> List[Detection]:
    """Confident cells -> boxes, greedy per-class NMS, sorted by score descending.

    Equal scores keep level-then-row-major cell order.
    """
    if not 0 < conf_thresh < 1:
        raise ValueError(f"conf_thresh must be in (0, 1), got {conf_thresh}")
    if not 0 < nms_iou < 1:
        raise ValueError(f"nms_iou must be in (0, 1), got {nms_iou}")
    cands = []
    for l, p in enumerate(pred.levels):
        prob = expit(p[0])
        stride = pred.stride(l)
        for row, col in zip(*np.nonzero(prob >= conf_thresh)):
            box = decode_box(deltas_from_raw(p[1:5, row, col]), stride, row, col)
            cands.append(Detection(tuple(float(v) for v in box), int(np.argmax(p[5:, row, col])),
                                   float(prob[row, col])))
    cands.sort(key=lambda d: -d.score)
    kept: List[Detection] = []
    for d in cands:
        same = [k.box for k in kept if k.cls == d.cls]
        if same and iou_matrix(np.array(d.box), np.array(same)).max() > nms_iou:
            continue
        kept.append(d)
    return kept

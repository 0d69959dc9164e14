"""Detection loss with its analytic gradient.

objectness      mean BCE-with-logits over every cell of every level
box             smooth-L1 summed over the 4 deltas, mean over assigned cells
classification  softmax cross-entropy, mean over assigned cells
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.special import expit, log_softmax, softmax

from ..nn.layers import ShapeError
from ..shapes.scene import SyntheticScene
from .coding import cell_of, choose_level, encode_box
from .features import RawPredictions


@dataclass(frozen=True)
class LossBreakdown:
    objectness: float
    box: float
    classification: float

    @property
    def total(self) -> float:
        return self.objectness + self.box + self.classification

    def to_dict(self):
        return {"objectness": self.objectness, "box": self.box,
                "classification": self.classification, "total": self.total}


@dataclass
class LevelTargets:
    objectness: np.ndarray   # [h, w] in {0, 1}
    box: np.ndarray          # [4, h, w]
    classes: np.ndarray      # [h, w], -1 where unassigned
    area: np.ndarray         # [h, w], owner area for conflict resolution


def assign_targets(scene: SyntheticScene, pred: RawPredictions) -> List[LevelTargets]:
    sides = [p.shape[-1] for p in pred.levels]
    strides = [pred.stride(l) for l in range(len(sides))]
    targets = [LevelTargets(np.zeros((s, s)), np.zeros((4, s, s)), np.full((s, s), -1, dtype=np.int64),
                            np.zeros((s, s))) for s in sides]
    for box, cls in zip(scene.boxes, scene.classes):
        cx, cy, w, h = box
        l = choose_level(w, h, strides)
        row, col = cell_of(cx, cy, strides[l], sides[l])
        t = targets[l]
        # a shared cell keeps the larger object
        if t.objectness[row, col] and t.area[row, col] >= w * h:
            continue
        t.objectness[row, col] = 1.0
        t.area[row, col] = w * h
        t.box[:, row, col] = encode_box(box, strides[l], row, col)
        t.classes[row, col] = int(cls)
    return targets


def _smooth_l1(d: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    a = np.abs(d)
    small = a < 1.0
    return np.where(small, 0.5 * d * d, a - 0.5), np.where(small, d, np.sign(d))


def detection_loss_and_grad(pred: RawPredictions, scene: SyntheticScene) -> Tuple[LossBreakdown, List[np.ndarray]]:
    if pred.image_size != scene.image_size:
        raise ShapeError(f"predictions are for image size {pred.image_size}, scene has {scene.image_size}")
    targets = assign_targets(scene, pred)
    n_cells = sum(p.shape[1] * p.shape[2] for p in pred.levels)
    n_pos = int(sum(t.objectness.sum() for t in targets))
    obj = box = cls = 0.0
    grads = []
    for p, t in zip(pred.levels, targets):
        g = np.zeros_like(p)
        z = p[0]
        obj += float((np.logaddexp(0.0, z) - t.objectness * z).sum())
        g[0] = (expit(z) - t.objectness) / n_cells
        if n_pos:
            rows, cols = np.nonzero(t.objectness)
            raw = p[1:5, rows, cols]
            s = expit(raw[:2])
            pred_deltas = np.concatenate([s, raw[2:]])
            d = pred_deltas - t.box[:, rows, cols]
            val, dd = _smooth_l1(d)
            box += float(val.sum())
            dd[:2] *= s * (1.0 - s)
            g[1:5, rows, cols] = dd / n_pos
            logits = p[5:, rows, cols]
            labels = t.classes[rows, cols]
            cls += float(-log_softmax(logits, axis=0)[labels, np.arange(len(labels))].sum())
            gl = softmax(logits, axis=0)
            gl[labels, np.arange(len(labels))] -= 1.0
            g[5:, rows, cols] = gl / n_pos
        grads.append(g)
    breakdown = LossBreakdown(
        objectness=obj / n_cells,
        box=box / n_pos if n_pos else 0.0,
        classification=cls / n_pos if n_pos else 0.0,
    )
    return breakdown, grads


def detection_loss(pred: RawPredictions, scene: SyntheticScene) -> LossBreakdown:
    return detection_loss_and_grad(pred, scene)[0]

"""Box <-> cell target encoding shared by the loss and the decoder.

An object is owned by one cell of one level. Within that cell its centre is
stored as an offset in [0, 1) (predicted through a sigmoid) and its size as
log(size / stride).
"""
from __future__ import annotations

from typing import Sequence, Tuple

import numpy as np
from scipy.special import expit, logit


def choose_level(w: float, h: float, strides: Sequence[float]) -> int:
    """Level whose stride is nearest to sqrt(w * h) in log scale; ties go to the finer level."""
    scale = np.log(np.sqrt(w * h))
    return int(np.argmin([abs(scale - np.log(s)) for s in strides]))


def cell_of(cx: float, cy: float, stride: float, side: int) -> Tuple[int, int]:
    row = min(int(cy // stride), side - 1)
    col = min(int(cx // stride), side - 1)
    return row, col


def encode_box(box: Sequence[float], stride: float, row: int, col: int) -> np.ndarray:
    cx, cy, w, h = box
    return np.array([cx / stride - col, cy / stride - row, np.log(w / stride), np.log(h / stride)])


def decode_box(deltas: Sequence[float], stride: float, row: int, col: int) -> np.ndarray:
    """Inverse of `encode_box` applied to predicted deltas (dx, dy already in [0, 1])."""
    dx, dy, tw, th = deltas
    return np.array([(col + dx) * stride, (row + dy) * stride, np.exp(tw) * stride, np.exp(th) * stride])


def raw_from_target(target: np.ndarray) -> np.ndarray:
    """Raw head outputs that reproduce an encoded target exactly."""
    return np.array([logit(target[0]), logit(target[1]), target[2], target[3]])


def deltas_from_raw(raw: np.ndarray) -> np.ndarray:
    return np.array([expit(raw[0]), expit(raw[1]), raw[2], raw[3]])

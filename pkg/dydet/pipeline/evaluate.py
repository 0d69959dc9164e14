"""AP at IoU 0.5, macro-averaged over classes that have ground truth."""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Sequence

import numpy as np

from ..boxes import iou_matrix
from ..detector.decode import Detection
from ..shapes.scene import SyntheticScene


@dataclass(frozen=True)
class EvalResult:
    ap: float
    per_class_ap: List[float]   # nan for classes without ground truth
    num_images: int


def average_precision(tp: Sequence[bool], num_truth: int) -> float:
    """Area under the all-point interpolated precision/recall curve; `tp` in ranked order."""
    if num_truth == 0:
        return float("nan")
    flags = np.asarray(tp, dtype=np.float64)
    tps = np.cumsum(flags)
    fps = np.cumsum(1.0 - flags)
    recall = np.concatenate([[0.0], tps / num_truth])
    precision = np.concatenate([[1.0], tps / np.maximum(tps + fps, 1e-12)])
    # precision envelope, right to left
    for i in range(len(precision) - 2, -1, -1):
        precision[i] = max(precision[i], precision[i + 1])
    steps = np.nonzero(recall[1:] != recall[:-1])[0] + 1
    return float(np.sum((recall[steps] - recall[steps - 1]) * precision[steps]))


def evaluate_ap(detections: Sequence[Sequence[Detection]], scenes: Sequence[SyntheticScene], num_classes: int,
                iou_thresh: float = 0.5) -> EvalResult:
    """Greedy matching per class, highest score first across all images.

    Ties in score go to the earlier image, then the earlier detection. A
    detection whose best-overlapping ground truth is already taken is a false
    positive.
    """
    if len(detections) != len(scenes):
        raise ValueError(f"{len(detections)} detection lists for {len(scenes)} images")
    per_class = []
    for c in range(num_classes):
        gts = [s.boxes[s.classes == c] for s in scenes]
        num_truth = int(sum(len(g) for g in gts))
        ranked = sorted(
            ((d.score, img, j, d) for img, dets in enumerate(detections) for j, d in enumerate(dets) if d.cls == c),
            key=lambda t: (-t[0], t[1], t[2]),
        )
        taken = [np.zeros(len(g), dtype=bool) for g in gts]
        tp = []
        for _, img, _, d in ranked:
            g = gts[img]
            if len(g) == 0:
                tp.append(False)
                continue
            ious = iou_matrix(np.array(d.box), g)[0]
            best = int(np.argmax(ious))
            if ious[best] >= iou_thresh and not taken[img][best]:
                taken[img][best] = True
                tp.append(True)
            else:
                tp.append(False)
        per_class.append(average_precision(tp, num_truth))
    valid = [a for a in per_class if not np.isnan(a)]
    return EvalResult(ap=float(np.mean(valid)) if valid else 0.0, per_class_ap=per_class, num_images=len(scenes))

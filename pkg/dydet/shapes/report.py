import logging
from dataclasses import dataclass

import numpy as np

from ..boxes import iou_matrix
from ..logging_utils import setup_logging
from .dataset import load_dataset
from .scene import SHAPE_NAMES, SyntheticScene

log = logging.getLogger("dydet.shapes.report")

@dataclass(frozen=True)
class ObjectStats:
    num_objects: int
    mean_size: float
    max_pair_iou: float

def object_stats(scene: SyntheticScene) -> ObjectStats:
    n = scene.num_objects
    if n == 0:
        return ObjectStats(0, 0.0, 0.0)
    sizes = np.sqrt(scene.boxes[:, 2] * scene.boxes[:, 3])
    max_iou = 0.0
    if n > 1:
        m = iou_matrix(scene.boxes, scene.boxes)
        max_iou = float(m[np.triu_indices(n, k=1)].max())
    return ObjectStats(n, float(sizes.mean()), max_iou)

def summarize(scenes, num_classes):
    counts = np.array([s.num_objects for s in scenes])
    per_class = np.zeros(num_classes, dtype=int)
    for s in scenes:
        per_class += np.bincount(s.classes, minlength=num_classes)[:num_classes]
    return {
        "scenes": len(scenes),
        "mean_objects": float(counts.mean()) if len(scenes) else 0.0,
        "empty_scenes": int((counts == 0).sum()),
        "truncated_scenes": sum(s.truncated for s in scenes),
        "per_class": {(SHAPE_NAMES[c] if c < len(SHAPE_NAMES) else f"class_{c}"): int(v)
                      for c, v in enumerate(per_class)},
    }

def report(path):
    setup_logging()
    ds = load_dataset(path)
    summary = summarize(ds.scenes, ds.manifest["config"]["num_classes"])
    log.info("report", extra={"context": {"path": path, "dataset_id": ds.dataset_id, **summary}})
    busiest = sorted(ds.scenes, key=lambda s: (-s.num_objects, s.scene_id))[:5]
    for s in busiest:
        st = object_stats(s)
        log.info("busy_scene", extra={"context": {"scene_id": s.scene_id, "objects": st.num_objects,
                                                  "mean_size": round(st.mean_size, 2),
                                                  "max_pair_iou": round(st.max_pair_iou, 3)}})
    return summary

if __name__ == "__main__":
    import argparse
    ap = argparse.ArgumentParser(description="Summarize a synthetic scene dataset")
    ap.add_argument("path")
    report(ap.parse_args().path)

"""The two-detector cascade with its router.

easy route: B1 -> D1                  (plus the router on B1's pyramid)
hard route: B1 -> G -> B2(x, H) -> D2 (plus the router)
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..shapes.scene import SyntheticScene
from .backbone import Backbone
from .connection import CompositeConnection
from .features import ArchConfig, MultiScaleFeatures, RawPredictions
from .head import Head
from .loss import LossBreakdown, detection_loss, detection_loss_and_grad
from .router import Router, pool_concat

log = logging.getLogger("dydet.detector.cascade")

ROUTES = ("easy", "hard")


@dataclass
class CascadeModel:
    arch: ArchConfig
    backbone1: Backbone
    head1: Head
    connection: CompositeConnection
    backbone2: Backbone
    head2: Head
    router: Router
    delta: Optional[float] = None

    def detector_params(self) -> Dict[str, np.ndarray]:
        out = {}
        for part in (self.backbone1, self.head1, self.connection, self.backbone2, self.head2):
            out.update(part.params())
        return out

    def named_params(self) -> Dict[str, np.ndarray]:
        out = self.detector_params()
        out.update(self.router.params())
        return out

    def first_pyramid(self, x: np.ndarray) -> MultiScaleFeatures:
        return self.backbone1.forward(x)[0]

    def easy_predictions(self, f1: MultiScaleFeatures) -> RawPredictions:
        return self.head1.forward(f1)[0]

    def hard_predictions(self, x: np.ndarray, f1: MultiScaleFeatures) -> RawPredictions:
        h, _ = self.connection.forward(f1)
        f2, _ = self.backbone2.forward(x, h)
        return self.head2.forward(f2)[0]


def build_model(arch: ArchConfig = ArchConfig(), seed: int = 0) -> CascadeModel:
    rng = np.random.default_rng(seed)
    return CascadeModel(
        arch=arch,
        backbone1=Backbone(arch, "b1", rng),
        head1=Head(arch, "d1", rng),
        connection=CompositeConnection(arch, "g", rng),
        backbone2=Backbone(arch, "b2", rng),
        head2=Head(arch, "d2", rng),
        router=Router(arch.pooled_dim, "r", rng),
    )


def image_losses(model: CascadeModel, scene: SyntheticScene) -> Tuple[LossBreakdown, LossBreakdown, np.ndarray]:
    """Both detectors' losses on one scene plus the router's pooled descriptor."""
    x = scene.image
    f1 = model.first_pyramid(x)
    l1 = detection_loss(model.easy_predictions(f1), scene)
    l2 = detection_loss(model.hard_predictions(x, f1), scene)
    return l1, l2, pool_concat(f1)


def joint_loss_and_grads(model: CascadeModel, scene: SyntheticScene):
    """L1 + L2 for one scene and its gradient w.r.t. every detector parameter.

    D2's loss reaches B1 through both G and B2's embedding inputs.
    """
    x = scene.image
    f1, c_b1 = model.backbone1.forward(x)
    p1, c_d1 = model.head1.forward(f1)
    l1, gp1 = detection_loss_and_grad(p1, scene)
    h, c_g = model.connection.forward(f1)
    f2, c_b2 = model.backbone2.forward(x, h)
    p2, c_d2 = model.head2.forward(f2)
    l2, gp2 = detection_loss_and_grad(p2, scene)

    grads: Dict[str, np.ndarray] = {}
    gf2, g = model.head2.backward(c_d2, gp2)
    grads.update(g)
    _, g, gh = model.backbone2.backward(c_b2, gf2)
    grads.update(g)
    gf1_g, g = model.connection.backward(c_g, gh)
    grads.update(g)
    gf1_d, g = model.head1.backward(c_d1, gp1)
    grads.update(g)
    _, g, _ = model.backbone1.backward(c_b1, [a + b for a, b in zip(gf1_g, gf1_d)])
    grads.update(g)
    return l1, l2, grads


def count_flops(model: CascadeModel, route: str) -> int:
    """Analytic multiply-accumulate count of one image on `route`."""
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}, got {route!r}")
    shared = model.backbone1.macs() + model.router.macs()
    if route == "easy":
        return shared + model.head1.macs()
    return shared + model.connection.macs() + model.backbone2.macs() + model.head2.macs()

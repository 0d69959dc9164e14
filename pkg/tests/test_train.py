import csv

import numpy as np
import pytest

from dydet.detector import build_model
from dydet.detector.checkpoint import encode_checkpoint
from dydet.detector.router import RandomScorer, Router
from dydet.pipeline.ablation import AblationConfig, train_router_ablation
from dydet.pipeline.train import (DeltaOffset, DivergenceError, RouterSample, TrainConfig, calibrate_delta,
                                  fit_router, loss_curve_report, lower_median, router_samples, train_detectors_joint,
                                  train_router)
from dydet.shapes import generate_scene
from tests.conftest import TINY_ARCH, TINY_SCENES


def _rows(path):
    with open(path) as f:
        return list(csv.reader(f))


def _synthetic_samples(n, l1, l2, seed=0, d=6):
    r = np.random.default_rng(seed)
    return [RouterSample(i, float(l1), float(l2), r.normal(size=d)) for i in range(n)]


def _skewed_model():
    """Detector 1 predicts objects everywhere, detector 2 nowhere; everything else identical."""
    m = build_model(TINY_ARCH, seed=0)
    for head, obj in ((m.head1, 5.0), (m.head2, -5.0)):
        for level in head.levels:
            out = level[-1]
            out.params["weight"][...] = 0.0
            out.params["bias"][...] = 0.0
            out.params["bias"][0] = obj
    return m


def test_one_epoch_batch_one_logs_n_steps(tiny_model, tiny_scenes, tmp_path):
    log_path = str(tmp_path / "det.csv")
    hist = train_detectors_joint(tiny_model, tiny_scenes, TrainConfig(epochs=1, batch_size=1), log_path)
    assert hist.steps == len(tiny_scenes)
    rows = _rows(log_path)
    assert rows[0] == ["step", "epoch", "l1", "l2", "loss"]
    assert len(rows) == len(tiny_scenes) + 1


def test_detector_training_is_deterministic(tiny_scenes):
    cfg = TrainConfig(epochs=1, batch_size=3, lr=1e-2, seed=4)
    a, b = build_model(TINY_ARCH, seed=1), build_model(TINY_ARCH, seed=1)
    train_detectors_joint(a, tiny_scenes, cfg)
    train_detectors_joint(b, tiny_scenes, cfg)
    assert encode_checkpoint(a) == encode_checkpoint(b)


def test_detector_training_lowers_the_loss(tiny_scenes):
    m = build_model(TINY_ARCH, seed=2)
    hist = train_detectors_joint(m, tiny_scenes, TrainConfig(epochs=6, batch_size=2, lr=5e-3))
    assert hist.epoch_loss[-1] < hist.epoch_loss[0]


def test_detector_training_never_touches_the_router(tiny_model, tiny_scenes):
    before = {k: v.copy() for k, v in tiny_model.router.params().items()}
    train_detectors_joint(tiny_model, tiny_scenes[:2], TrainConfig(lr=1e-2))
    for k, v in tiny_model.router.params().items():
        np.testing.assert_array_equal(v, before[k])


def test_empty_training_set_is_rejected(tiny_model):
    with pytest.raises(ValueError):
        train_detectors_joint(tiny_model, [], TrainConfig())


def test_non_finite_loss_reports_the_step():
    samples = _synthetic_samples(3, 1.0, 0.5)
    samples[1] = RouterSample(1, float("nan"), 0.5, samples[1].pooled)
    router = Router(6, rng=np.random.default_rng(0))
    with pytest.raises(DivergenceError) as exc:
        fit_router(router, samples, lambda c, phi, s: router.backward(c, 0.0),
                   lambda phi, s: s.l1, TrainConfig(seed=0))
    assert exc.value.step in (0, 1, 2)


@pytest.mark.parametrize("values, expected", [([1, 2, 3], 2), ([1, 2, 3, 4], 2), ([5], 5), ([4, 1, 3, 2], 2)])
def test_lower_median(values, expected):
    assert lower_median(values) == expected


def test_median_of_nothing():
    with pytest.raises(ValueError):
        lower_median([])


def test_identical_detectors_give_zero_delta(tiny_model, tiny_scenes):
    for src, dst in ((tiny_model.backbone1, tiny_model.backbone2), (tiny_model.head1, tiny_model.head2)):
        dp = dst.params()
        for (_, v), (k2, _) in zip(sorted(src.params().items()), sorted(dp.items())):
            dp[k2][...] = v
    tiny_model.connection.zero_()
    off = calibrate_delta(tiny_model, tiny_scenes, "tiny")
    assert off.delta == 0.0 and tiny_model.delta == 0.0
    assert off.size == len(tiny_scenes)


def test_router_training_freezes_detectors(tiny_model, tiny_scenes):
    before = {k: v.copy() for k, v in tiny_model.detector_params().items()}
    r_before = {k: v.copy() for k, v in tiny_model.router.params().items()}
    off = calibrate_delta(tiny_model, tiny_scenes)
    train_router(tiny_model, off, tiny_scenes, TrainConfig(epochs=2, lr=1e-2))
    for k, v in tiny_model.detector_params().items():
        np.testing.assert_array_equal(v, before[k])
    assert any((v != r_before[k]).any() for k, v in tiny_model.router.params().items())


def test_zero_coefficient_leaves_router_unchanged(tiny_model):
    samples = _synthetic_samples(10, 2.0, 1.0)
    router = Router(6, rng=np.random.default_rng(3))
    before = {k: v.copy() for k, v in router.params().items()}
    train_router(tiny_model, DeltaOffset(1.0, "fixed", 10), [], TrainConfig(epochs=3, lr=0.1),
                 router=router, samples=samples)
    for k, v in router.params().items():
        # folding the input standardization back in is exact up to rounding
        np.testing.assert_allclose(v, before[k], rtol=1e-12, atol=1e-12)


def test_router_training_is_deterministic(tiny_model):
    samples = _synthetic_samples(20, 2.0, 1.0, seed=1)
    samples = [RouterSample(s.scene_id, s.l1 + 0.1 * s.scene_id, s.l2, s.pooled) for s in samples]
    cfg = TrainConfig(epochs=2, lr=1e-2, seed=9)
    a = Router(6, rng=np.random.default_rng(0))
    b = Router(6, rng=np.random.default_rng(0))
    for r in (a, b):
        train_router(tiny_model, DeltaOffset(1.5, "fixed", 20), [], cfg, router=r, samples=samples)
    for k in a.params():
        assert a.params()[k].tobytes() == b.params()[k].tobytes()


def _skewed_gap_samples(n=400, d=16, seed=0):
    """Pooled vectors bunched tightly around 3.0; the loss gap is log-normal in the first dimension."""
    r = np.random.default_rng(seed)
    x = r.normal(size=(n, d))
    return [RouterSample(i, 1.0 + float(np.exp(x[i, 0])), 1.0, 3.0 + 0.05 * x[i]) for i in range(n)]


def _train_on_skewed_gaps(tiny_model, samples):
    router = Router(samples[0].pooled.size, rng=np.random.default_rng(0))
    delta = lower_median([s.l1 - s.l2 for s in samples])
    train_router(tiny_model, DeltaOffset(delta, "skewed", len(samples)), [],
                 TrainConfig(epochs=20, lr=1e-2, weight_decay=5e-3), router=router, samples=samples)
    return router, np.array([router.score(s.pooled) for s in samples])


def _logits(router, samples):
    # phi saturates at its clip bounds once trained; logits keep the order
    return np.array([router.forward(s.pooled)[1].z2[0] for s in samples])


def test_router_splits_right_skewed_gaps_near_the_median(tiny_model):
    _, phi = _train_on_skewed_gaps(tiny_model, _skewed_gap_samples())
    assert 0.35 <= float(np.mean(phi > 0.5)) <= 0.65


def test_images_scored_harder_have_the_larger_loss_gap(tiny_model):
    samples = _skewed_gap_samples(seed=1)
    router, _ = _train_on_skewed_gaps(tiny_model, samples)
    logit = _logits(router, samples)
    gap = np.array([s.l1 - s.l2 for s in samples])
    hard = logit > np.median(logit)
    assert hard.any() and (~hard).any()
    assert gap[hard].mean() > gap[~hard].mean()


def test_fit_router_returns_a_router_for_raw_descriptors(tiny_model):
    samples = _skewed_gap_samples(n=50)
    router, phi = _train_on_skewed_gaps(tiny_model, samples)
    # same scores from a router rebuilt on the raw weights alone
    raw = Router(router.d, rng=np.random.default_rng(5))
    for k, v in router.params().items():
        raw.params()[k][...] = v
    np.testing.assert_allclose([raw.score(s.pooled) for s in samples], phi, rtol=1e-12)


def test_unconstrained_objective_collapses_to_the_second_detector():
    model = _skewed_model()
    scenes = [generate_scene(TINY_SCENES, s) for s in range(16)]
    scenes_samples = router_samples(model, scenes)
    assert all(s.l2 < s.l1 for s in scenes_samples)
    res = train_router_ablation(model, scenes, AblationConfig("unconstrained"),
                                TrainConfig(epochs=2, lr=0.2, seed=0), samples=scenes_samples)
    assert res.history.epoch_phi[1] > res.history.epoch_phi[0]
    assert np.mean([res.scorer.score(s.pooled) for s in scenes_samples]) > 0.9


def test_lambda_zero_matches_unconstrained(tiny_model):
    samples = _synthetic_samples(15, 2.0, 1.0, seed=2)
    cfg = TrainConfig(epochs=2, lr=1e-2, seed=5)
    a = train_router_ablation(tiny_model, [], AblationConfig("unconstrained"), cfg, samples=samples)
    b = train_router_ablation(tiny_model, [], AblationConfig("lambda", 0.0), cfg, samples=samples)
    assert a.history.epoch_phi == b.history.epoch_phi
    for k in a.scorer.params():
        assert a.scorer.params()[k].tobytes() == b.scorer.params()[k].tobytes()


def test_lambda_penalty_pushes_phi_down(tiny_model):
    samples = _synthetic_samples(15, 1.0, 1.0, seed=2)
    cfg = TrainConfig(epochs=3, lr=1e-2)
    res = train_router_ablation(tiny_model, [], AblationConfig("lambda-penalty", 1.0), cfg, samples=samples)
    assert res.history.epoch_phi[-1] < res.history.epoch_phi[0]


def test_random_strategy_is_reproducible(tiny_model):
    samples = _synthetic_samples(10, 1.0, 1.0)
    a = train_router_ablation(tiny_model, [], AblationConfig("random"), TrainConfig(seed=7), samples=samples)
    b = train_router_ablation(tiny_model, [], AblationConfig("random"), TrainConfig(seed=7), samples=samples)
    assert isinstance(a.scorer, RandomScorer)
    assert [a.scorer.score(s.pooled) for s in samples] == [b.scorer.score(s.pooled) for s in samples]


def test_ap_based_labels_follow_the_median_gap(tiny_model):
    samples = [RouterSample(i, 1.0 + i, 1.0, np.full(6, float(i))) for i in range(5)]
    res = train_router_ablation(tiny_model, [], AblationConfig("ap-based"), TrainConfig(epochs=1, lr=1e-2),
                                samples=samples)
    assert res.labels.tolist() == [0.0, 0.0, 0.0, 1.0, 1.0]


@pytest.mark.parametrize("kwargs", [{"strategy": "oracle"}, {"strategy": "lambda"}, {"strategy": "lambda", "lam": -1},
                                    {"strategy": "proposed", "lam": 0.5}])
def test_invalid_ablation_config(kwargs):
    with pytest.raises(ValueError):
        AblationConfig(**kwargs)


@pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"lr": 0.0}, {"weight_decay": -1.0},
                                    {"optimizer": "rmsprop"}])
def test_invalid_train_config(kwargs):
    with pytest.raises(ValueError):
        TrainConfig(**kwargs)


def test_loss_curve_report(tiny_model, tiny_scenes, tmp_path):
    path = str(tmp_path / "curve.csv")
    recs = loss_curve_report(tiny_model, 0.0, tiny_scenes, path)
    assert len(recs) == len(tiny_scenes)
    assert all(r.l1_adjusted == r.l1 and r.l2_adjusted == r.l2 for r in recs)
    gaps = [r.l1 - r.l2 for r in recs]
    assert gaps == sorted(gaps)
    assert len(_rows(path)) == len(tiny_scenes) + 1
    shifted = loss_curve_report(tiny_model, 0.5, tiny_scenes)
    assert all(r.l1_adjusted == pytest.approx(r.l1 - 0.25) for r in shifted)

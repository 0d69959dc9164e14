import numpy as np
import pytest

from dydet.detector import count_flops, decode_predictions
from dydet.pipeline.inference import (calibrate_threshold, compute_k, infer_dynamic, measure_route_latency,
                                      route_for, score_scenes, threshold_for_budget)

CONF = 0.005


@pytest.mark.parametrize("lat, k", [((10, 20, 15), 0.5), ((10, 20, 10), 0.0), ((10, 20, 20), 1.0)])
def test_compute_k(lat, k):
    assert compute_k(*lat) == k


@pytest.mark.parametrize("lat", [(10, 20, 25), (10, 20, 5), (20, 20, 20), (30, 20, 25)])
def test_compute_k_rejects(lat):
    with pytest.raises(ValueError):
        compute_k(*lat)


def test_median_threshold_of_nine_scores():
    scores = np.linspace(0.1, 0.9, 9)
    tau = calibrate_threshold(scores, 0.5)
    assert tau == pytest.approx(0.5)
    assert int((scores > tau).sum()) == 4


def test_threshold_endpoints():
    scores = np.array([0.3, 0.1, 0.7, 0.4])
    assert calibrate_threshold(scores, 0.0) == 0.7
    tau = calibrate_threshold(scores, 1.0)
    assert tau < 0.1 and tau == np.nextafter(0.1, -np.inf)
    assert all(route_for(s, tau) == "hard" for s in scores)
    assert all(route_for(s, 0.7) == "easy" for s in scores)


def test_threshold_rejects_bad_input():
    with pytest.raises(ValueError):
        calibrate_threshold([], 0.5)
    with pytest.raises(ValueError):
        calibrate_threshold([0.5], 1.5)


def test_ties_route_easy():
    assert route_for(0.5, 0.5) == "easy"


def test_budget_threshold():
    scores = np.linspace(0.0, 1.0, 101)
    cal = threshold_for_budget(scores, 10.0, 20.0, 12.0, scores_source="val")
    assert cal.k == pytest.approx(0.2)
    assert cal.tau == pytest.approx(0.8)
    assert cal.num_scores == 101 and cal.scores_source == "val"


@pytest.mark.parametrize("tau", [np.inf, 1.0, 5.0])
def test_high_tau_is_the_first_detector(tiny_model, tiny_scenes, tau):
    for s in tiny_scenes[:3]:
        dets, d = infer_dynamic(tiny_model, tau, s.image, conf_thresh=CONF)
        ref = decode_predictions(tiny_model.head1.forward(tiny_model.backbone1.forward(s.image)[0])[0], CONF)
        assert d.route == "easy"
        assert dets == ref
        assert d.flops == count_flops(tiny_model, "easy")


@pytest.mark.parametrize("tau", [-np.inf, 0.0, -1.0])
def test_low_tau_is_the_full_cascade(tiny_model, tiny_scenes, tau):
    for s in tiny_scenes[:3]:
        dets, d = infer_dynamic(tiny_model, tau, s.image, conf_thresh=CONF)
        f1 = tiny_model.backbone1.forward(s.image)[0]
        h = tiny_model.connection.forward(f1)[0]
        ref = decode_predictions(tiny_model.head2.forward(tiny_model.backbone2.forward(s.image, h)[0])[0], CONF)
        assert d.route == "hard"
        assert dets == ref
        assert d.flops == count_flops(tiny_model, "hard")


def test_decision_carries_the_router_score(tiny_model, tiny_scenes):
    scores = score_scenes(tiny_model, tiny_scenes)
    for s, phi in zip(tiny_scenes, scores):
        _, d = infer_dynamic(tiny_model, 0.5, s.image)
        assert d.phi == phi
        assert d.route == route_for(phi, 0.5)
        assert d.wall_time > 0


def test_route_latency_medians(tiny_model, tiny_scenes):
    easy, hard = measure_route_latency(tiny_model, tiny_scenes[:2], runs=3)
    assert easy > 0 and hard > 0
    with pytest.raises(ValueError):
        measure_route_latency(tiny_model, [], runs=1)

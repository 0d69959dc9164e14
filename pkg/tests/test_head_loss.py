import numpy as np
import pytest

from dydet.detector import Head, MultiScaleFeatures, RawPredictions, assign_targets, detection_loss, \
    detection_loss_and_grad
from dydet.detector.coding import encode_box, raw_from_target
from dydet.nn.gradcheck import finite_diff_check
from dydet.shapes import SyntheticScene

# on the 32 px tiny architecture this box lives at level 1 (stride 8), cell row 2 col 1
BOX = (13.0, 21.0, 10.0, 10.0)


def _scene(boxes, classes):
    return SyntheticScene(image=np.zeros((1, 32, 32)), boxes=np.array(boxes, dtype=float).reshape(-1, 4),
                          classes=np.array(classes, dtype=np.int64), scene_id=0)


def _empty_pred(arch, fill=0.0):
    return RawPredictions([np.full((arch.num_outputs, arch.side(l), arch.side(l)), fill)
                           for l in range(arch.num_levels)], arch.image_size)


def _features(arch, r):
    return MultiScaleFeatures([r.normal(size=arch.level_shape(l)) for l in range(arch.num_levels)])


def test_zero_head_gives_half_objectness(tiny_arch):
    head = Head(tiny_arch)
    pred, _ = head.forward(MultiScaleFeatures([np.zeros(tiny_arch.level_shape(l))
                                               for l in range(tiny_arch.num_levels)]))
    for p in pred.levels:
        assert not p.any()
        np.testing.assert_array_equal(1.0 / (1.0 + np.exp(-p[0])), 0.5)


def test_bias_only_head_is_spatially_constant(tiny_arch, rng):
    head = Head(tiny_arch)
    bias = np.arange(tiny_arch.num_outputs, dtype=float)
    for level in head.levels:
        level[-1].params["bias"][...] = bias
    pred, _ = head.forward(_features(tiny_arch, rng))
    for p in pred.levels:
        np.testing.assert_array_equal(p, np.broadcast_to(bias[:, None, None], p.shape))


def test_objectness_prior_is_set_with_rng(tiny_arch, rng):
    head = Head(tiny_arch, rng=rng)
    assert head.levels[0][-1].params["bias"][0] == pytest.approx(-4.595)


def test_empty_scene_with_confident_background(tiny_arch):
    pred = _empty_pred(tiny_arch)
    for p in pred.levels:
        p[0] = -20.0
    loss = detection_loss(pred, _scene([], []))
    assert loss.box == 0.0 and loss.classification == 0.0
    assert loss.total < 1e-8


def test_perfect_prediction_has_near_zero_loss(tiny_arch):
    pred = _empty_pred(tiny_arch)
    for p in pred.levels:
        p[0] = -20.0
    p = pred.levels[1]
    p[0, 2, 1] = 20.0
    p[1:5, 2, 1] = raw_from_target(encode_box(BOX, 8.0, 2, 1))
    p[5:, 2, 1] = [-20.0, -20.0, 20.0]
    assert detection_loss(pred, _scene([BOX], [2])).total < 1e-6


def test_zero_prediction_hand_values(tiny_arch):
    loss = detection_loss(_empty_pred(tiny_arch), _scene([BOX], [0]))
    assert loss.objectness == pytest.approx(np.log(2.0))
    assert loss.box == pytest.approx(0.5 * (2 * 0.125 ** 2 + 2 * np.log(1.25) ** 2))
    assert loss.classification == pytest.approx(np.log(3.0))


def test_shared_cell_keeps_larger_object(tiny_arch):
    pred = _empty_pred(tiny_arch)
    big = (14.0, 22.0, 12.0, 12.0)
    t = assign_targets(_scene([BOX, big], [0, 1]), pred)
    assert t[1].objectness.sum() == 1
    assert t[1].classes[2, 1] == 1
    np.testing.assert_allclose(t[1].box[:, 2, 1], encode_box(big, 8.0, 2, 1))


def test_loss_gradient_wrt_predictions(tiny_arch, rng):
    pred = RawPredictions([rng.normal(size=(tiny_arch.num_outputs, tiny_arch.side(l), tiny_arch.side(l)))
                           for l in range(tiny_arch.num_levels)], tiny_arch.image_size)
    scene = _scene([BOX, (6.0, 6.0, 4.0, 4.0)], [2, 0])
    _, grads = detection_loss_and_grad(pred, scene)
    params = {f"l{l}": p for l, p in enumerate(pred.levels)}
    analytic = {f"l{l}": g for l, g in enumerate(grads)}
    assert finite_diff_check(lambda: detection_loss(pred, scene).total, params, analytic, eps=1e-4) < 1e-3


def test_loss_through_head_gradient(tiny_arch, rng):
    head = Head(tiny_arch, rng=rng)
    feats = _features(tiny_arch, rng)
    scene = _scene([BOX], [1])
    pred, cache = head.forward(feats)
    _, gp = detection_loss_and_grad(pred, scene)
    grad_f, grads = head.backward(cache, gp)
    params = dict(head.params())
    analytic = dict(grads)
    for l in range(tiny_arch.num_levels):
        params[f"f.{l}"] = feats.levels[l]
        analytic[f"f.{l}"] = grad_f[l]
    f = lambda: detection_loss(head.forward(feats)[0], scene).total
    assert finite_diff_check(f, params, analytic, eps=1e-4, max_coords=10) < 1e-3


def test_image_size_mismatch(tiny_arch):
    with pytest.raises(ValueError):
        detection_loss(_empty_pred(tiny_arch), SyntheticScene(np.zeros((1, 64, 64)), np.zeros((0, 4)),
                                                              np.zeros(0, dtype=np.int64), 0))

import numpy as np
import pytest

from dydet.nn.gradcheck import GradientCheckError, finite_diff_check, numeric_grads


def test_quadratic_is_exact():
    w = np.array([3.0])
    err = finite_diff_check(lambda: float(w[0] ** 2), {"w": w}, {"w": np.array([6.0])})
    assert err < 1e-8


def test_wrong_gradient_is_detected():
    w = np.array([3.0])
    assert finite_diff_check(lambda: float(w[0] ** 2), {"w": w}, {"w": np.array([5.0])}) > 0.1


def test_parameters_are_restored():
    w = np.array([1.0, -2.0, 0.5])
    before = w.copy()
    finite_diff_check(lambda: float((w ** 3).sum()), {"w": w}, {"w": 3 * w ** 2})
    np.testing.assert_array_equal(w, before)


def test_non_finite_objective_aborts():
    w = np.array([0.0])
    with pytest.raises(GradientCheckError):
        finite_diff_check(lambda: float("inf"), {"w": w}, {"w": np.zeros(1)})


def test_shape_mismatch_is_rejected():
    w = np.zeros(3)
    with pytest.raises(ValueError):
        finite_diff_check(lambda: 0.0, {"w": w}, {"w": np.zeros(2)})


def test_subsampled_coordinates_are_seeded():
    w = np.random.default_rng(0).normal(size=50)
    f = lambda: float(np.sin(w).sum())
    g = {"w": np.cos(w) + 1e-3}
    a = finite_diff_check(f, {"w": w}, g, max_coords=5, seed=7)
    b = finite_diff_check(f, {"w": w}, g, max_coords=5, seed=7)
    assert a == b


def test_numeric_grads_matches_closed_form():
    w = np.array([[1.0, 2.0], [-1.0, 0.5]])
    g = numeric_grads(lambda: float((w ** 2).sum()), {"w": w})
    np.testing.assert_allclose(g["w"], 2 * w, rtol=1e-6)

import numpy as np
import pytest

from lanecast.errors import ShapeError, TrainingDivergenceError
from lanecast.optim import DEFAULT_LEARNING_RATE, AdamState, adam_step


def test_zero_gradient_leaves_params():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    before = [a.copy() for a in p]
    state = AdamState.for_params(p)
    adam_step(p, [np.zeros(2), np.zeros((2, 2))], state)
    for a, b in zip(p, before):
        np.testing.assert_array_equal(a, b)
    assert state.step == 1


def test_first_step_moves_by_learning_rate():
    # with bias correction the first update is lr * g/|g| up to epsilon
    p = [np.array([0.5, 0.5, 0.5])]
    g = [np.array([3.0, -0.2, 1e-3])]
    state = AdamState.for_params(p, learning_rate=0.01)
    adam_step(p, g, state)
    np.testing.assert_allclose(p[0], 0.5 - 0.01 * np.sign(g[0]), rtol=0, atol=1e-7)


def test_default_learning_rate():
    assert AdamState().learning_rate == DEFAULT_LEARNING_RATE == 7e-5


def test_converges_on_quadratic():
    w = [np.array([3.0, -4.0])]
    state = AdamState.for_params(w, learning_rate=0.05)
    for _ in range(2000):
        adam_step(w, [2 * w[0]], state)
    assert np.all(np.abs(w[0]) < 1e-3)


def test_step_counts_up():
    p = [np.zeros(1)]
    state = AdamState.for_params(p)
    for k in range(1, 4):
        adam_step(p, [np.ones(1)], state)
        assert state.step == k


def test_nonfinite_gradient_rejected_without_update():
    p = [np.ones(2), np.ones(2)]
    state = AdamState.for_params(p)
    with pytest.raises(TrainingDivergenceError):
        adam_step(p, [np.ones(2), np.array([np.nan, 0.0])], state)
    np.testing.assert_array_equal(p[0], 1.0)
    assert state.step == 0


def test_shape_mismatch():
    p = [np.ones(2)]
    with pytest.raises(ShapeError):
        adam_step(p, [np.ones(3)], AdamState.for_params(p))

import math

import numpy as np
import pytest

from autodiff.optim import AdamState, adam_step, global_grad_norm
from schema.errors import DivergenceError, ShapeError


def scalar_adam(theta, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * (g * g)
        theta -= (lr / (1 - b1 ** t)) * m / (math.sqrt(v / (1 - b2 ** t)) + eps)
        trace.append(theta)
    return trace


def test_adam_on_quadratic_matches_reference_and_converges():
    theta = np.array([1.0])
    state = AdamState()
    trace = []
    for _ in range(1000):
        adam_step({"theta": theta}, {"theta": 2 * theta}, state, lr=0.01)
        trace.append(float(theta[0]))

    np.testing.assert_allclose(trace, scalar_adam(1.0, 0.01, 1000), rtol=1e-12)
    assert state.t == 1000
    # early steps move straight toward the minimum
    assert all(b < a for a, b in zip([1.0] + trace[:50], trace[:50]))
    assert abs(trace[-1]) < 0.1


def test_first_step_moves_by_lr():
    theta = np.array([3.0, -2.0])
    adam_step({"w": theta}, {"w": np.array([0.5, -7.0])}, AdamState(), lr=0.1)
    np.testing.assert_allclose(theta, [2.9, -1.9], atol=1e-6)


def test_non_finite_gradient_leaves_state_untouched():
    p = np.array([1.0, 2.0])
    q = np.array([3.0])
    state = AdamState()
    adam_step({"p": p, "q": q}, {"p": np.ones(2), "q": np.ones(1)}, state, lr=0.1)
    before = (p.copy(), q.copy(), state.m["p"].copy(), state.t)

    with pytest.raises(DivergenceError) as err:
        adam_step({"p": p, "q": q}, {"p": np.ones(2), "q": np.array([np.nan])}, state, lr=0.1)
    assert err.value.parameter == "q"
    np.testing.assert_array_equal(p, before[0])
    np.testing.assert_array_equal(q, before[1])
    np.testing.assert_array_equal(state.m["p"], before[2])
    assert state.t == before[3]


def test_missing_and_misshaped_gradients():
    with pytest.raises(ShapeError):
        adam_step({"p": np.zeros(2)}, {}, AdamState(), lr=0.1)
    with pytest.raises(ShapeError):
        adam_step({"p": np.zeros(2)}, {"p": np.zeros(3)}, AdamState(), lr=0.1)


def test_clip_by_global_norm_rescales_first_moment():
    p = np.zeros(2)
    state = AdamState()
    adam_step({"p": p}, {"p": np.array([30.0, 40.0])}, state, lr=0.1, clip_norm=5.0)
    np.testing.assert_allclose(state.m["p"], 0.1 * np.array([3.0, 4.0]), rtol=1e-9)
    assert global_grad_norm({"a": np.array([3.0]), "b": np.array([4.0])}) == pytest.approx(5.0)


def test_buffers_round_trip_through_load():
    p = np.ones(3)
    state = AdamState()
    adam_step({"layer.kernel": p}, {"layer.kernel": np.arange(3.0)}, state, lr=0.01)
    restored = AdamState()
    restored.load_buffers(state.buffers(), state.t)

    q = p.copy()
    adam_step({"layer.kernel": p}, {"layer.kernel": np.ones(3)}, state, lr=0.01)
    adam_step({"layer.kernel": q}, {"layer.kernel": np.ones(3)}, restored, lr=0.01)
    np.testing.assert_array_equal(p, q)

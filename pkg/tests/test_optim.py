import math

import numpy as np
import pytest

from tabseg.errors import ConfigurationError
from tabseg.optim import Adam, AdamState, adam_step
from tabseg.tensor import Tensor


def reference_adam(p, grads, lr, wd, b1=0.9, b2=0.999, eps=1e-8):
    """Scalar textbook Adam with L2 added to the gradient, looped in Python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        g = g + wd * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_first_step_moves_by_learning_rate():
    # bias correction makes the first step -lr * sign(g) when |g| >> eps
    p = Tensor(np.array([0.5, -0.5, 2.0]), requires_grad=True, dtype=np.float64)
    adam_step({"w": p}, {"w": np.array([3.0, -0.2, 1e-3])}, AdamState(weight_decay=0.0))
    np.testing.assert_allclose(p.data - np.array([0.5, -0.5, 2.0]), [-1e-5, 1e-5, -1e-5], rtol=1e-4)


@pytest.mark.parametrize("wd", [0.0, 1e-6, 0.1])
def test_matches_reference_over_several_steps(wd):
    rng = np.random.default_rng(0)
    grads = rng.standard_normal(7)
    p = Tensor(np.array([1.3]), dtype=np.float64)
    state = AdamState(learning_rate=1e-2, weight_decay=wd)
    for g in grads:
        adam_step({"w": p}, {"w": np.array([g])}, state)
    assert p.data[0] == pytest.approx(reference_adam(1.3, grads, 1e-2, wd), rel=1e-12)
    assert state.step_count == 7


def test_missing_gradient_counts_as_zero():
    p = Tensor(np.array([1.0]), dtype=np.float64)
    state = AdamState(learning_rate=0.1, weight_decay=0.0)
    adam_step({"w": p}, {"w": None}, state)
    assert p.data[0] == 1.0
    state = AdamState(learning_rate=0.1, weight_decay=0.5)
    adam_step({"w": p}, {}, state)
    assert p.data[0] < 1.0  # decay alone still pulls towards zero


def test_state_shape_mismatch_is_rejected():
    state = AdamState()
    state.m["w"] = np.zeros(2)
    state.v["w"] = np.zeros(2)
    with pytest.raises(ConfigurationError, match="'w'"):
        adam_step({"w": Tensor(np.zeros(3))}, {"w": np.zeros(3)}, state)


def test_wrapper_zero_grad_and_step():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    opt = Adam({"w": p}, learning_rate=0.5, weight_decay=0.0)
    p.grad = np.array([1.0, -1.0], dtype=np.float32)
    opt.step()
    np.testing.assert_allclose(p.data, [0.5, 2.5], rtol=1e-6)
    opt.zero_grad()
    assert p.grad is None
    assert p.dtype == np.float32

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from qseg.optim import Schedule, apply_update, quantized_lr, weight_decay
from qseg.quant import quant_step


def test_lr_schedule():
    s = Schedule(0.1, halving_period=100, k_U=24)
    lr0 = quantized_lr(s, 0)
    assert abs(lr0 - 0.1) <= quant_step(24) / 2
    assert quantized_lr(s, 99) == lr0
    assert quantized_lr(s, 100) == lr0 / 2
    assert quantized_lr(s, 350) == lr0 / 8
    assert quantized_lr(Schedule(0.1, 100, None), 0) == 0.1


def test_lr_preconditions():
    with pytest.raises(ValueError):
        Schedule(0.0)
    with pytest.raises(ValueError):
        Schedule(0.1, halving_period=0)
    with pytest.raises(ValueError):
        quantized_lr(Schedule(0.1), -1)
    with pytest.raises(ValueError):
        quantized_lr(Schedule(1e-9, k_U=8), 0)


def test_zero_gradient_and_boundary():
    d = quant_step(24)
    m = np.array([0.25, -0.5, 1 - d])
    np.testing.assert_array_equal(apply_update(m, np.zeros(3), 0.1, 24), m)
    out = apply_update(np.array([1 - d]), np.array([-1.0]), 0.1, 24)
    assert out[0] == 1 - d


def test_dead_zone_example():
    k = 16
    d = quant_step(k)
    m = np.arange(-5, 6) * d
    g = np.full(11, 0.49 * d / 0.01)
    np.testing.assert_array_equal(apply_update(m, g, 0.01, k), m)


@given(st.integers(9, 24), st.lists(st.floats(-0.4999, 0.4999), min_size=1, max_size=30),
       st.floats(1e-4, 1.0))
def test_dead_zone_property(k, fracs, lr):
    d = quant_step(k)
    m = (np.arange(len(fracs)) - len(fracs) // 2) * d
    g = np.array(fracs) * d / lr
    assert np.all(np.abs(g * lr) < d / 2)
    np.testing.assert_array_equal(apply_update(m, g, lr, k), m)


def test_constant2_grid_update():
    d = quant_step(8)
    out = apply_update(np.array([1.0]), np.array([1.0]), 2 * d, 8, scale=2.0)
    assert out[0] == 1.0 - 2 * d
    assert apply_update(np.array([1.9]), np.array([-10.0]), 1.0, 8, scale=2.0)[0] == 2 * (1 - d)


def test_weight_decay():
    g = np.array([0.1, -0.2])
    assert weight_decay(g, np.ones(2), 0.0) is g
    d = quant_step(8)
    out = weight_decay(np.zeros(1), np.array([1 - d]), 5e-4)
    assert out[0] == 5e-4 * (1 - d)
    with pytest.raises(ValueError):
        weight_decay(g, g, -1.0)

import numpy as np
import pytest

from dit_cache.common.autodiff import parameter
from dit_cache.common.optimizers import AdamW


def test_first_step_moves_by_lr_against_gradient_sign():
    p = parameter(np.zeros((2, 3)))
    p.grad = np.array([[1.0, -2.0, 0.5], [3.0, -1.0, 4.0]])
    AdamW([p], lr=0.1).step()
    np.testing.assert_allclose(p.data, -0.1 * np.sign(p.grad), rtol=1e-6)


def test_row_restricted_step_touches_one_row():
    p = parameter(np.ones((4, 2)))
    opt = AdamW([p], lr=0.01, weight_decay=0.1)
    for _ in range(3):
        p.grad = np.ones((4, 2))
        opt.step(rows=[2])
    np.testing.assert_array_equal(p.data[[0, 1, 3]], 1.0)
    assert np.all(p.data[2] < 1.0)
    np.testing.assert_array_equal(opt.steps[0], [0, 0, 3, 0])
    np.testing.assert_array_equal(opt.m[0][[0, 1, 3]], 0.0)


def test_weight_decay_is_decoupled():
    p = parameter(np.full(3, 2.0))
    p.grad = np.zeros(3)
    AdamW([p], lr=0.1, weight_decay=0.5).step()
    np.testing.assert_allclose(p.data, 2.0 - 0.1 * 0.5 * 2.0)


def test_parameters_without_grad_are_skipped():
    a, b = parameter(np.ones(2)), parameter(np.ones(2))
    a.grad = np.ones(2)
    opt = AdamW([a, b], lr=0.1)
    opt.step()
    np.testing.assert_array_equal(b.data, 1.0)
    opt.zero_grad()
    assert a.grad is None


def test_invalid_hyperparameters():
    with pytest.raises(ValueError):
        AdamW([parameter(np.ones(1))], lr=0.0)
    with pytest.raises(ValueError):
        AdamW([parameter(np.ones(1))], betas=(0.9, 1.0))

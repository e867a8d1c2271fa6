"""The finite-difference oracle itself, on functions with known derivatives."""

import numpy as np
import pytest

from consattn.gradcheck import finite_diff_grad, max_rel_err
from consattn.tensor import ParamStore


def test_quadratic_derivative():
    store = ParamStore()
    store.add("theta", np.array([3.0]))
    grads = finite_diff_grad(lambda s: float(s["theta"].data[0] ** 2), store, 1e-6)
    assert abs(grads["theta"][0] - 6.0) < 1e-6


def test_linear_sum_gives_ones():
    store = ParamStore()
    store.add("theta", np.arange(6.0).reshape(2, 3))
    grads = finite_diff_grad(lambda s: float(s["theta"].data.sum()), store, 1e-6)
    np.testing.assert_allclose(grads["theta"], 1.0, atol=1e-9)


def test_parameters_restored_after_probing():
    store = ParamStore()
    store.add("theta", np.array([1.0, 2.0]))
    before = store["theta"].data.copy()
    finite_diff_grad(lambda s: float(s["theta"].data.sum()), store, 1e-6)
    np.testing.assert_array_equal(store["theta"].data, before)


def test_step_must_be_positive():
    store = ParamStore()
    store.add("theta", np.array([1.0]))
    with pytest.raises(ValueError):
        finite_diff_grad(lambda s: 0.0, store, 0.0)


def test_max_rel_err_guards_zero_gradients():
    a = np.array([0.0, 1.0])
    n = np.array([1e-10, 1.0 + 1e-7])
    assert max_rel_err(a, n) < 1e-4


def test_max_rel_err_flags_disagreement():
    assert max_rel_err(np.array([1.0]), np.array([1.1])) > 0.05


def test_max_rel_err_empty_is_zero():
    assert max_rel_err(np.zeros(0), np.zeros(0)) == 0.0

"""Unit tests for the tape-based reverse-mode engine."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sedkit import autodiff as ad
from sedkit.autodiff import Var


def _var(x):
    return Var(np.asarray(x, dtype=np.float64), requires_grad=True)


class TestForwardValues:
    def test_add_mul_div(self):
        a, b = _var([1.0, 2.0]), _var([3.0, 5.0])
        assert np.allclose(ad.add(a, b).value, [4.0, 7.0])
        assert np.allclose(ad.mul(a, b).value, [3.0, 10.0])
        assert np.allclose(ad.div(a, b).value, [1 / 3, 2 / 5])

    def test_matmul(self):
        a = _var(np.arange(6.0).reshape(2, 3))
        b = _var(np.arange(12.0).reshape(3, 4))
        assert np.allclose(ad.matmul(a, b).value, a.value @ b.value)

    def test_sigmoid_matches_closed_form(self):
        x = _var(np.linspace(-30, 30, 101))
        expect = 1.0 / (1.0 + np.exp(-x.value))
        assert np.allclose(ad.sigmoid(x).value, expect)
        # stable at extremes: no overflow warnings, proper saturation
        big = ad.sigmoid(_var([1e4, -1e4])).value
        assert big[0] == 1.0 and big[1] == 0.0

    def test_softmax_rows_sum_to_one(self):
        x = _var(np.random.default_rng(0).normal(0, 3, (4, 5)))
        y = ad.softmax(x, scale=10.0, axis=1).value
        assert np.allclose(y.sum(axis=1), 1.0)
        assert np.all(y > 0)

    def test_operator_sugar(self):
        a, b = _var(2.0), _var(3.0)
        assert (a + b).value == 5.0
        assert (a - b).value == -1.0
        assert (a * b).value == 6.0
        assert (a / b).value == pytest.approx(2 / 3)
        assert (-a).value == -2.0
        assert (1.0 + a).value == 3.0


class TestBackward:
    def test_implicit_grad_requires_scalar(self):
        v = _var([1.0, 2.0])
        with pytest.raises(ValueError):
            v.backward()

    def test_add_broadcast_unbroadcast(self):
        a = _var(np.ones((3, 4)))
        b = _var(np.ones(4))
        loss = ad.sum_(ad.add(a, b))
        loss.backward()
        assert a.grad.shape == (3, 4)
        assert b.grad.shape == (4,)
        assert np.allclose(b.grad, 3.0)  # summed over broadcast axis

    def test_mul_grads(self):
        a, b = _var([2.0, 3.0]), _var([5.0, 7.0])
        ad.sum_(ad.mul(a, b)).backward()
        assert np.allclose(a.grad, b.value)
        assert np.allclose(b.grad, a.value)

    def test_matmul_grads(self):
        rng = np.random.default_rng(1)
        a = _var(rng.normal(size=(2, 3)))
        b = _var(rng.normal(size=(3, 4)))
        ad.sum_(ad.matmul(a, b)).backward()
        assert np.allclose(a.grad, np.ones((2, 4)) @ b.value.T)
        assert np.allclose(b.grad, a.value.T @ np.ones((2, 4)))

    def test_grad_accumulates_across_uses(self):
        a = _var(3.0)
        loss = ad.add(ad.mul(a, a), a)  # a^2 + a
        loss.backward()
        assert a.grad == pytest.approx(2 * 3.0 + 1.0)

    def test_constant_gets_no_grad(self):
        const = Var(np.ones(3))
        v = _var(np.ones(3))
        ad.sum_(ad.mul(const, v)).backward()
        assert const.grad is None
        assert v.grad is not None

    def test_clip_zero_grad_outside(self):
        x = _var([-1.0, 0.5, 2.0])
        ad.sum_(ad.clip(x, 0.0, 1.0)).backward()
        assert np.allclose(x.grad, [0.0, 1.0, 0.0])

    def test_diamond_graph_single_backward_pass(self):
        # d(x*x + x*x)/dx = 4x; a naive graph walk would double-count
        x = _var(2.0)
        y = ad.mul(x, x)
        loss = ad.add(y, y)
        loss.backward()
        assert x.grad == pytest.approx(8.0)

    def test_softmax_backward_finite_difference(self):
        rng = np.random.default_rng(2)
        x0 = rng.normal(0, 1, (3, 4))
        w = rng.normal(0, 1, (3, 4))
        scale = 7.0

        def f(arr):
            v = Var(arr, requires_grad=True)
            return v, ad.sum_(ad.mul(ad.softmax(v, scale=scale, axis=1),
                                     Var(w)))

        v, loss = f(x0)
        loss.backward()
        eps = 1e-6
        for idx in np.ndindex(x0.shape):
            xp = x0.copy()
            xp[idx] += eps
            xm = x0.copy()
            xm[idx] -= eps
            num = (f(xp)[1].value - f(xm)[1].value) / (2 * eps)
            assert v.grad[idx] == pytest.approx(float(num), abs=1e-5)

    def test_take_index_and_reshape_grads(self):
        x = _var(np.arange(12.0).reshape(3, 4))
        picked = ad.take_index(x, 2, axis=1)
        loss = ad.sum_(ad.reshape(picked, (3, 1)))
        loss.backward()
        expect = np.zeros((3, 4))
        expect[:, 2] = 1.0
        assert np.allclose(x.grad, expect)

    def test_mean_and_square(self):
        x = _var([1.0, 2.0, 3.0])
        ad.mean(ad.square(x)).backward()
        assert np.allclose(x.grad, 2 * x.value / 3)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=8),
       st.lists(st.floats(-10, 10), min_size=1, max_size=8))
def test_add_commutes_mul_distributes(xs, ys):
    n = min(len(xs), len(ys))
    a = Var(np.asarray(xs[:n]))
    b = Var(np.asarray(ys[:n]))
    assert np.array_equal(ad.add(a, b).value, ad.add(b, a).value)
    assert np.allclose(ad.mul(a, b).value, np.asarray(xs[:n]) * ys[:n])


def test_unbroadcast_shapes():
    g = np.ones((5, 3, 4))
    assert ad._unbroadcast(g, (3, 4)).shape == (3, 4)
    assert np.allclose(ad._unbroadcast(g, (3, 4)), 5.0)
    assert ad._unbroadcast(np.ones((3, 4)), (3, 1)).shape == (3, 1)
    assert np.allclose(ad._unbroadcast(np.ones((3, 4)), (1, 4)), 3.0)

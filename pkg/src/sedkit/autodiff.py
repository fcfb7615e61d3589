"""Minimal reverse-mode differentiation over numpy arrays.

This is not a general graph engine: it supports exactly the operations the
training paths need (elementwise arithmetic, matmul, sigmoid/tanh/softmax,
reductions, slicing, and a fused recurrent-sequence op defined elsewhere).
Backward closures accumulate into ``Var.grad``.
"""

from __future__ import annotations

import numpy as np


class Var:
    """A value in the computation graph.

    ``value`` is a numpy array (any dtype, float32 default in training,
    float64 during gradient checks). Constants are plain arrays wrapped with
    ``requires_grad=False``; their gradients are never materialized.
    """

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, grad=None):
        """Run reverse-mode accumulation from this node."""
        if grad is None:
            if self.value.size != 1:
                raise ValueError("implicit gradient only for scalar outputs")
            grad = np.ones_like(self.value)
        order = _toposort(self)
        self.grad = np.array(grad, dtype=self.value.dtype).reshape(self.value.shape)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar -------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, iter(root._parents))]
    seen.add(id(root))
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def as_var(x):
    return x if isinstance(x, Var) else Var(np.asarray(x))


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, dim in enumerate(shape):
        if dim == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _make(value, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Var(value, requires_grad=req,
               parents=tuple(p for p in parents if p.requires_grad),
               backward=backward if req else None)


def add(a, b):
    a, b = as_var(a), as_var(b)
    out_val = a.value + b.value

    def backward(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return _make(out_val, (a, b), backward)


def mul(a, b):
    a, b = as_var(a), as_var(b)
    out_val = a.value * b.value

    def backward(g):
        a.accumulate(_unbroadcast(g * b.value, a.shape))
        b.accumulate(_unbroadcast(g * a.value, b.shape))

    return _make(out_val, (a, b), backward)


def div(a, b):
    a, b = as_var(a), as_var(b)
    out_val = a.value / b.value

    def backward(g):
        a.accumulate(_unbroadcast(g / b.value, a.shape))
        b.accumulate(_unbroadcast(-g * a.value / (b.value ** 2), b.shape))

    return _make(out_val, (a, b), backward)


def matmul(a, b):
    a, b = as_var(a), as_var(b)
    out_val = a.value @ b.value

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.value.swapaxes(-1, -2))
        if b.requires_grad:
            b.accumulate(a.value.swapaxes(-1, -2) @ g)

    return _make(out_val, (a, b), backward)


def sigmoid(a):
    a = as_var(a)
    # stable piecewise evaluation
    x = a.value
    out_val = np.empty_like(x)
    pos = x >= 0
    out_val[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out_val[~pos] = ex / (1.0 + ex)

    def backward(g):
        a.accumulate(g * out_val * (1.0 - out_val))

    return _make(out_val, (a,), backward)


def tanh(a):
    a = as_var(a)
    out_val = np.tanh(a.value)

    def backward(g):
        a.accumulate(g * (1.0 - out_val ** 2))

    return _make(out_val, (a,), backward)


def log(a):
    a = as_var(a)
    out_val = np.log(a.value)

    def backward(g):
        a.accumulate(g / a.value)

    return _make(out_val, (a,), backward)


def clip(a, lo, hi):
    """Clamp with zero gradient outside [lo, hi]."""
    a = as_var(a)
    out_val = np.clip(a.value, lo, hi)

    def backward(g):
        inside = (a.value >= lo) & (a.value <= hi)
        a.accumulate(g * inside)

    return _make(out_val, (a,), backward)


def softmax(a, scale=1.0, axis=-1):
    """softmax(scale * a) along ``axis``."""
    a = as_var(a)
    z = scale * a.value
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out_val = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out_val).sum(axis=axis, keepdims=True)
        a.accumulate(scale * out_val * (g - dot))

    return _make(out_val, (a,), backward)


def sum_(a, axis=None, keepdims=False):
    a = as_var(a)
    out_val = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    return _make(out_val, (a,), backward)


def mean(a, axis=None):
    a = as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(sum_(a, axis=axis), 1.0 / n)


def square(a):
    a = as_var(a)
    out_val = a.value ** 2

    def backward(g):
        a.accumulate(2.0 * g * a.value)

    return _make(out_val, (a,), backward)


def take_index(a, idx, axis):
    """Select one index along ``axis`` (dimension removed)."""
    a = as_var(a)
    out_val = np.take(a.value, idx, axis=axis)

    def backward(g):
        full = np.zeros_like(a.value)
        sl = [slice(None)] * a.value.ndim
        sl[axis] = idx
        full[tuple(sl)] = g
        a.accumulate(full)

    return _make(out_val, (a,), backward)


def reshape(a, shape):
    a = as_var(a)
    out_val = a.value.reshape(shape)
    orig = a.shape

    def backward(g):
        a.accumulate(g.reshape(orig))

    return _make(out_val, (a,), backward)


def stack(vars_, axis=0):
    """Stack Vars along a new axis."""
    vs = [as_var(v) for v in vars_]
    out_val = np.stack([v.value for v in vs], axis=axis)

    def backward(g):
        parts = np.moveaxis(g, axis, 0)
        for v, gp in zip(vs, parts):
            v.accumulate(gp)

    return _make(out_val, tuple(vs), backward)

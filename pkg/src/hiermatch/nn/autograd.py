"""Tape-free reverse-mode autodiff over numpy arrays.

Each ``Tensor`` remembers its parents and a closure that pushes the output
gradient back to them; ``Tensor.backward`` walks the graph in reverse
topological order.  Only the operations the matching networks need are
provided.
"""
from __future__ import annotations

import numpy as np


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self.grad = None
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None

    shape = property(lambda self: self.data.shape)
    ndim = property(lambda self: self.data.ndim)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def numpy(self) -> np.ndarray:
        return self.data

    def _accum(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad = self.grad + g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accum(grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # arithmetic -----------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g, b.shape))

        return Tensor(a.data + b.data, _parents=(a, b), _backward=bw)

    __radd__ = __add__

    def __neg__(self):
        return self * -1.0

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g * b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor(a.data * b.data, _parents=(a, b), _backward=bw)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g / b.data, a.shape))
            if b.requires_grad:
                b._accum(_unbroadcast(-g * a.data / b.data**2, b.shape))

        return Tensor(a.data / b.data, _parents=(a, b), _backward=bw)

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def bw(g):
            if a.requires_grad:
                a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            if b.requires_grad:
                ga = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
                b._accum(_unbroadcast(ga, b.shape))

        return Tensor(a.data @ b.data, _parents=(a, b), _backward=bw)

    def __getitem__(self, idx):
        a = self

        def bw(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor(a.data[idx], _parents=(a,), _backward=bw)

    # reductions / shape ---------------------------------------------------

    def sum(self, axis=None, keepdims=False):
        a = self

        def bw(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,), _backward=bw)

    def mean(self, axis=None, keepdims=False):
        n = self.data.size if axis is None else self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        a = self

        def bw(g):
            a._accum(g.reshape(a.shape))

        return Tensor(a.data.reshape(*shape), _parents=(a,), _backward=bw)

    def broadcast_to(self, shape):
        a = self

        def bw(g):
            a._accum(_unbroadcast(g, a.shape))

        return Tensor(np.broadcast_to(a.data, shape), _parents=(a,), _backward=bw)

    def max(self, axis):
        """Maximum along ``axis``; the gradient goes to the first maximal entry."""
        a = self
        arg = np.argmax(a.data, axis=axis)
        out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis).squeeze(axis)

        def bw(g):
            full = np.zeros_like(a.data)
            np.put_along_axis(full, np.expand_dims(arg, axis), np.expand_dims(g, axis), axis)
            a._accum(full)

        return Tensor(out, _parents=(a,), _backward=bw)

    # elementwise ----------------------------------------------------------

    def relu(self):
        a = self
        mask = a.data > 0

        def bw(g):
            a._accum(g * mask)

        return Tensor(np.where(mask, a.data, 0.0), _parents=(a,), _backward=bw)

    def sigmoid(self):
        a = self
        out = _sigmoid(a.data)

        def bw(g):
            a._accum(g * out * (1.0 - out))

        return Tensor(out, _parents=(a,), _backward=bw)

    def sqrt(self):
        a = self
        out = np.sqrt(a.data)

        def bw(g):
            a._accum(g * 0.5 / out)

        return Tensor(out, _parents=(a,), _backward=bw)

    def softmax(self, axis=-1):
        a = self
        out = softmax(a.data, axis=axis)

        def bw(g):
            a._accum(out * (g - np.sum(g * out, axis=axis, keepdims=True)))

        return Tensor(out, _parents=(a,), _backward=bw)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def param(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        for t, part in zip(ts, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accum(part)

    return Tensor(np.concatenate([t.data for t in ts], axis=axis), _parents=tuple(ts), _backward=bw)


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softmax(x, axis=-1):
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return z / np.sum(z, axis=axis, keepdims=True)


def l2_normalize(x: Tensor, axis=-1, eps=1e-12) -> Tensor:
    norm = ((x * x).sum(axis=axis, keepdims=True) + eps).sqrt()
    return x / norm

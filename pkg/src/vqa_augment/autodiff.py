"""Minimal reverse-mode differentiation over dense numpy matrices.

Only the operations the model needs are provided: matmul, broadcasting
add/sub/mul, tanh, sigmoid, relu, column softmax, concatenation, column
slicing and axis sums. Each op records a closure that pushes the output
gradient to its inputs; :meth:`Tensor.backward` runs them in reverse
topological order.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None,
                 _parents: tuple = (), _backward=None):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents if self.requires_grad else ()
        self._backward = _backward if self.requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.shape}, name={self.name!r})"

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        # gradients are never mutated in place, so storing views is safe
        if self.grad is None:
            self.grad = g
        else:
            self.grad = self.grad + g

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
        self._accum(np.asarray(grad, dtype=self.data.dtype))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype)
    return Tensor(arr)


def _coerce(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor) and not isinstance(b, Tensor):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    return a, b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        a._accum(g @ b.data.T)
        b._accum(a.data.T @ g)

    return Tensor(a.data @ b.data, _parents=(a, b), _backward=back)


def add(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    return Tensor(a.data + b.data, _parents=(a, b), _backward=back)


def sub(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(-g, b.shape))

    return Tensor(a.data - b.data, _parents=(a, b), _backward=back)


def mul(a, b) -> Tensor:
    a, b = _coerce(a, b)

    def back(g):
        if a.requires_grad:
            a._accum(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accum(_unbroadcast(g * a.data, b.shape))

    return Tensor(a.data * b.data, _parents=(a, b), _backward=back)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def back(g):
        a._accum(g * (1.0 - y * y))

    return Tensor(y, _parents=(a,), _backward=back)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def back(g):
        a._accum(g * y * (1.0 - y))

    return Tensor(y, _parents=(a,), _backward=back)


def relu(a: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is taken as 0."""
    mask = a.data > 0

    def back(g):
        a._accum(g * mask)

    # np.maximum keeps NaN visible so divergence is not masked as a zero loss
    return Tensor(np.maximum(a.data, 0.0).astype(a.data.dtype), _parents=(a,), _backward=back)


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        a._accum(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return Tensor(y, _parents=(a,), _backward=back)


def concat(items: Sequence[Tensor], axis: int = 1) -> Tensor:
    items = list(items)
    sizes = [t.shape[axis] for t in items]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(items, bounds[:-1], bounds[1:]):
            if t.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                t._accum(g[tuple(sl)])

    return Tensor(np.concatenate([t.data for t in items], axis=axis), _parents=tuple(items), _backward=back)


def cols(a: Tensor, start: int, stop: int) -> Tensor:
    """Column slice ``a[:, start:stop]``."""

    def back(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        a._accum(full)

    return Tensor(a.data[:, start:stop], _parents=(a,), _backward=back)


def rows(a: Tensor, start: int, stop: int) -> Tensor:
    """Row slice ``a[start:stop]``."""

    def back(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        a._accum(full)

    return Tensor(a.data[start:stop], _parents=(a,), _backward=back)


def sum_(a: Tensor, axis: int | None = None) -> Tensor:
    """Sum over ``axis`` keeping dims, or over everything to a 1x1 tensor."""
    if axis is None:
        y = a.data.sum().reshape(1, 1)

        def back(g):
            a._accum(np.broadcast_to(g.reshape(()), a.shape).astype(a.data.dtype))
    else:
        y = a.data.sum(axis=axis, keepdims=True)

        def back(g):
            a._accum(np.broadcast_to(g, a.shape).astype(a.data.dtype))

    return Tensor(y, _parents=(a,), _backward=back)

"""Dense float64 tensors with reverse-mode automatic differentiation.

The graph is built eagerly: every operation returns a new DTensor holding
its value, its parent tensors, and a closure that pushes the output
gradient back to the parents. Tensors are treated as immutable once they
participate in a graph. Gradient tracking can be switched off globally
with `no_grad()` for simulation-only runs, which skips all graph
construction.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np

from ..errors import UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (simulation fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class DTensor:
    """Array value plus optional gradient buffer and graph linkage."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward")

    # make numpy defer to the reflected operators below
    __array_ufunc__ = None

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward: Callable[[np.ndarray], None] | None = None

    # -- introspection -------------------------------------------------

    @property
    def shape(self) -> tuple:
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        return float(self.values)

    def detach(self) -> "DTensor":
        return DTensor(self.values)

    def __repr__(self):
        return f"DTensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __len__(self):
        return len(self.values)

    # -- graph plumbing ------------------------------------------------

    def _accumulate(self, grad: np.ndarray) -> None:
        grad = _unbroadcast(np.asarray(grad, dtype=np.float64), self.values.shape)
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad = self.grad + grad

    def backward(self, free_graph: bool = True) -> None:
        """Reverse-mode pass from a scalar output.

        Gradients accumulate into `.grad` of every tensor with
        requires_grad that lies on a path from a leaf to this output.
        The graph is released afterwards unless free_graph=False.
        """
        if self.values.size != 1:
            raise UsageError("backward() requires a scalar output")
        order = _toposort(self)
        self.grad = np.ones_like(self.values)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        if free_graph:
            for node in order:
                node._parents = ()
                node._backward = None

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return take(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None):
        return tmean(self, axis=axis)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])


def as_dtensor(x) -> DTensor:
    return x if isinstance(x, DTensor) else DTensor(x)


def values_of(x) -> np.ndarray:
    return x.values if isinstance(x, DTensor) else np.asarray(x, dtype=np.float64)


def _toposort(root: DTensor) -> list:
    """Iterative topological order (graphs can be tens of thousands deep)."""
    order: list = []
    seen: set = set()
    stack: list = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return order


def make_op(values: np.ndarray, parents: Sequence, backward: Callable) -> DTensor:
    """Build a graph node.

    `backward(grad)` must push contributions into each parent via
    `parent._accumulate(...)`. When gradients are globally disabled or no
    parent requires them, only the value is kept.
    """
    parents = tuple(p for p in parents if isinstance(p, DTensor))
    out = DTensor(values)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def backward(loss: DTensor, leaves: Iterable[DTensor] | None = None) -> list:
    """Run the reverse pass and return gradients per leaf.

    Leaves that do not lie on any path to the loss get an exact-zero
    gradient buffer rather than None.
    """
    loss.backward()
    grads = []
    if leaves is not None:
        for leaf in leaves:
            if leaf.grad is None:
                leaf.grad = np.zeros_like(leaf.values)
            grads.append(leaf.grad)
    return grads


def zero_grads(tensors: Iterable[DTensor]) -> None:
    for t in tensors:
        t.grad = None


# -- elementwise arithmetic ------------------------------------------------


def add(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    out = a.values + b.values

    def _bw(g):
        a._accumulate(g)
        b._accumulate(g)

    return make_op(out, (a, b), _bw)


def sub(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    out = a.values - b.values

    def _bw(g):
        a._accumulate(g)
        b._accumulate(-g)

    return make_op(out, (a, b), _bw)


def mul(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    av, bv = a.values, b.values
    out = av * bv

    def _bw(g):
        a._accumulate(g * bv)
        b._accumulate(g * av)

    return make_op(out, (a, b), _bw)


def div(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    av, bv = a.values, b.values
    out = av / bv

    def _bw(g):
        a._accumulate(g / bv)
        b._accumulate(-g * av / (bv * bv))

    return make_op(out, (a, b), _bw)


def power(a, p: float):
    a = as_dtensor(a)
    av = a.values
    out = av ** p

    def _bw(g):
        a._accumulate(g * p * av ** (p - 1))

    return make_op(out, (a,), _bw)


def exp(a):
    a = as_dtensor(a)
    out = np.exp(a.values)

    def _bw(g):
        a._accumulate(g * out)

    return make_op(out, (a,), _bw)


def log(a):
    a = as_dtensor(a)
    av = a.values
    out = np.log(av)

    def _bw(g):
        a._accumulate(g / av)

    return make_op(out, (a,), _bw)


def tanh(a):
    a = as_dtensor(a)
    out = np.tanh(a.values)

    def _bw(g):
        a._accumulate(g * (1.0 - out * out))

    return make_op(out, (a,), _bw)


def sigmoid(a):
    a = as_dtensor(a)
    out = stable_sigmoid(a.values)

    def _bw(g):
        a._accumulate(g * out * (1.0 - out))

    return make_op(out, (a,), _bw)


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def relu(a):
    a = as_dtensor(a)
    av = a.values
    out = np.maximum(av, 0.0)
    # subgradient 0 at the kink
    mask = av > 0.0

    def _bw(g):
        a._accumulate(g * mask)

    return make_op(out, (a,), _bw)


def softplus(a):
    """log(1 + exp(a)), computed stably; derivative is sigmoid(a)."""
    a = as_dtensor(a)
    av = a.values
    out = np.maximum(av, 0.0) + np.log1p(np.exp(-np.abs(av)))
    sig = stable_sigmoid(av)

    def _bw(g):
        a._accumulate(g * sig)

    return make_op(out, (a,), _bw)


def sqrt0(a):
    """Square root with zero subgradient at 0 (inputs assumed >= 0)."""
    a = as_dtensor(a)
    av = np.maximum(a.values, 0.0)
    out = np.sqrt(av)
    pos = av > 0.0
    inv = np.zeros_like(av)
    inv[pos] = 0.5 / out[pos]

    def _bw(g):
        a._accumulate(g * inv)

    return make_op(out, (a,), _bw)


def clip(a, lo: float | None, hi: float | None):
    """Clamp with zero gradient outside the active range."""
    a = as_dtensor(a)
    av = a.values
    out = np.clip(av, lo, hi)
    mask = np.ones_like(av)
    if lo is not None:
        mask = mask * (av > lo)
    if hi is not None:
        mask = mask * (av < hi)

    def _bw(g):
        a._accumulate(g * mask)

    return make_op(out, (a,), _bw)


def maximum(a, b):
    """Elementwise max; ties route the gradient to the first argument."""
    a, b = as_dtensor(a), as_dtensor(b)
    av, bv = a.values, b.values
    take_a = av >= bv
    out = np.where(take_a, av, bv)

    def _bw(g):
        a._accumulate(g * take_a)
        b._accumulate(g * (~take_a))

    return make_op(out, (a, b), _bw)


def minimum(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    av, bv = a.values, b.values
    take_a = av <= bv
    out = np.where(take_a, av, bv)

    def _bw(g):
        a._accumulate(g * take_a)
        b._accumulate(g * (~take_a))

    return make_op(out, (a, b), _bw)


# -- reductions and shape ops ----------------------------------------------


def tsum(a, axis=None, keepdims=False):
    a = as_dtensor(a)
    av = a.values
    out = av.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        g = np.asarray(g)
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, av.shape))

    return make_op(out, (a,), _bw)


def tmean(a, axis=None):
    a = as_dtensor(a)
    n = a.values.size if axis is None else a.values.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def tmin(a):
    """Scalar minimum; subgradient goes to the first minimiser."""
    a = as_dtensor(a)
    av = a.values
    idx = int(np.argmin(av))
    out = av.reshape(-1)[idx]

    def _bw(g):
        buf = np.zeros_like(av)
        buf.reshape(-1)[idx] = float(g)
        a._accumulate(buf)

    return make_op(np.asarray(out), (a,), _bw)


def reshape(a, shape):
    a = as_dtensor(a)
    old = a.values.shape
    out = a.values.reshape(shape)

    def _bw(g):
        a._accumulate(np.asarray(g).reshape(old))

    return make_op(out, (a,), _bw)


def transpose(a):
    a = as_dtensor(a)
    out = a.values.T

    def _bw(g):
        a._accumulate(np.asarray(g).T)

    return make_op(out, (a,), _bw)


def matmul(a, b):
    a, b = as_dtensor(a), as_dtensor(b)
    av, bv = a.values, b.values
    out = av @ bv

    def _bw(g):
        g = np.asarray(g)
        if av.ndim == 2 and bv.ndim == 2:
            a._accumulate(g @ bv.T)
            b._accumulate(av.T @ g)
        elif av.ndim == 2 and bv.ndim == 1:
            a._accumulate(np.outer(g, bv))
            b._accumulate(av.T @ g)
        elif av.ndim == 1 and bv.ndim == 2:
            a._accumulate(g @ bv.T)
            b._accumulate(np.outer(av, g))
        else:  # 1D @ 1D
            a._accumulate(g * bv)
            b._accumulate(g * av)

    return make_op(out, (a, b), _bw)


def stack(tensors: Sequence, axis: int = 0):
    tensors = [as_dtensor(t) for t in tensors]
    out = np.stack([t.values for t in tensors], axis=axis)

    def _bw(g):
        g = np.asarray(g)
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return make_op(out, tuple(tensors), _bw)


def take(a, key):
    """Basic indexing/slicing with scatter-add backward."""
    a = as_dtensor(a)
    out = a.values[key]

    def _bw(g):
        buf = np.zeros_like(a.values)
        np.add.at(buf, key, np.asarray(g))
        a._accumulate(buf)

    return make_op(out, (a,), _bw)


def take_along(a, idx: np.ndarray):
    """Gather along the last axis of a 2D tensor; scatter-add backward."""
    a = as_dtensor(a)
    idx = np.asarray(idx)
    out = np.take_along_axis(a.values, idx, axis=-1)

    def _bw(g):
        buf = np.zeros_like(a.values)
        rows = np.arange(a.values.shape[0])[:, None]
        np.add.at(buf, (rows, idx), np.asarray(g))
        a._accumulate(buf)

    return make_op(out, (a,), _bw)


def where_const(cond: np.ndarray, a, b):
    """Select by a constant boolean mask (the mask itself carries no grad)."""
    a, b = as_dtensor(a), as_dtensor(b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.values, b.values)

    def _bw(g):
        g = np.asarray(g)
        a._accumulate(np.where(cond, g, 0.0))
        b._accumulate(np.where(cond, 0.0, g))

    return make_op(out, (a, b), _bw)

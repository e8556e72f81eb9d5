"""Reverse-mode gradients for small dense networks.

A ``Var`` wraps a float64 numpy array and records enough of the computation
graph to push the gradient of one scalar result back onto every parameter
that influenced it. Only first-order gradients of scalar values are
supported. All operations accept plain ndarrays as well; a graph node is
created only when a tracked ``Var`` participates and recording is enabled,
so the same layer code serves both plain evaluation and training.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import UsageError

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the context."""
    global _GRAD_ENABLED
    saved = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = saved


def value_of(x):
    """Plain float64 ndarray view of ``x``, whether or not it is a Var."""
    if isinstance(x, Var):
        return x.value
    return np.asarray(x, dtype=np.float64)


class Var:
    """Node in the gradient graph: a float64 array plus accumulated gradient."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __float__(self) -> float:
        return float(self.value)

    def grad_or_zeros(self) -> np.ndarray:
        """Accumulated gradient; exact zeros when nothing reached this node."""
        if self.grad is None:
            return np.zeros_like(self.value)
        return self.grad

    def _accumulate(self, g) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        self.grad += g

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _tracked(*xs) -> bool:
    if not _GRAD_ENABLED:
        return False
    return any(isinstance(x, Var) and x.requires_grad for x in xs)


def _node(value, parents, backward) -> Var:
    out = Var(value, requires_grad=True)
    out._parents = tuple(
        p for p in parents if isinstance(p, Var) and p.requires_grad
    )
    out._backward = backward
    return out


def _wants(x) -> bool:
    return isinstance(x, Var) and x.requires_grad


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    shape = tuple(shape)
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    va, vb = value_of(a), value_of(b)
    out = va + vb
    if not _tracked(a, b):
        return out

    def backward(g):
        if _wants(a):
            a._accumulate(_unbroadcast(g, va.shape))
        if _wants(b):
            b._accumulate(_unbroadcast(g, vb.shape))

    return _node(out, (a, b), backward)


def sub(a, b):
    va, vb = value_of(a), value_of(b)
    out = va - vb
    if not _tracked(a, b):
        return out

    def backward(g):
        if _wants(a):
            a._accumulate(_unbroadcast(g, va.shape))
        if _wants(b):
            b._accumulate(_unbroadcast(-g, vb.shape))

    return _node(out, (a, b), backward)


def mul(a, b):
    va, vb = value_of(a), value_of(b)
    out = va * vb
    if not _tracked(a, b):
        return out

    def backward(g):
        if _wants(a):
            a._accumulate(_unbroadcast(g * vb, va.shape))
        if _wants(b):
            b._accumulate(_unbroadcast(g * va, vb.shape))

    return _node(out, (a, b), backward)


def div(a, b):
    va, vb = value_of(a), value_of(b)
    out = va / vb
    if not _tracked(a, b):
        return out

    def backward(g):
        if _wants(a):
            a._accumulate(_unbroadcast(g / vb, va.shape))
        if _wants(b):
            b._accumulate(_unbroadcast(-g * va / (vb * vb), vb.shape))

    return _node(out, (a, b), backward)


def scale(x, c):
    vx = value_of(x)
    c = float(c)
    out = vx * c
    if not _tracked(x):
        return out

    def backward(g):
        x._accumulate(g * c)

    return _node(out, (x,), backward)


def exp(x):
    vx = value_of(x)
    out = np.exp(vx)
    if not _tracked(x):
        return out

    def backward(g):
        x._accumulate(g * out)

    return _node(out, (x,), backward)


def clip(x, lo, hi):
    vx = value_of(x)
    out = np.clip(vx, lo, hi)
    if not _tracked(x):
        return out
    mask = (vx > lo) & (vx < hi)

    def backward(g):
        x._accumulate(g * mask)

    return _node(out, (x,), backward)


def relu(x):
    vx = value_of(x)
    out = np.maximum(vx, 0.0)
    if not _tracked(x):
        return out
    mask = vx > 0.0

    def backward(g):
        x._accumulate(g * mask)

    return _node(out, (x,), backward)


def tanh(x):
    vx = value_of(x)
    out = np.tanh(vx)
    if not _tracked(x):
        return out

    def backward(g):
        x._accumulate(g * (1.0 - out * out))

    return _node(out, (x,), backward)


def linear(x, weight, bias=None):
    """Affine map ``y = x @ W.T + b`` for a batch of row vectors."""
    vx, vw = value_of(x), value_of(weight)
    out = vx @ vw.T
    if bias is not None:
        out = out + value_of(bias)
    if not _tracked(x, weight, bias):
        return out

    def backward(g):
        if _wants(x):
            x._accumulate(g @ vw)
        if _wants(weight):
            weight._accumulate(g.T @ vx)
        if bias is not None and _wants(bias):
            bias._accumulate(g.sum(axis=0))

    return _node(out, (x, weight, bias), backward)


def hstack(a, b):
    """Concatenate along the last axis."""
    va, vb = value_of(a), value_of(b)
    out = np.concatenate((va, vb), axis=-1)
    if not _tracked(a, b):
        return out
    na = va.shape[-1]

    def backward(g):
        if _wants(a):
            a._accumulate(g[..., :na])
        if _wants(b):
            b._accumulate(g[..., na:])

    return _node(out, (a, b), backward)


def col_slice(x, start, stop):
    vx = value_of(x)
    out = vx[..., start:stop]
    if not _tracked(x):
        return out

    def backward(g):
        full = np.zeros_like(vx)
        full[..., start:stop] = g
        x._accumulate(full)

    return _node(out, (x,), backward)


def row_slice(x, start, stop):
    vx = value_of(x)
    out = vx[start:stop]
    if not _tracked(x):
        return out

    def backward(g):
        full = np.zeros_like(vx)
        full[start:stop] = g
        x._accumulate(full)

    return _node(out, (x,), backward)


def reshape(x, shape):
    vx = value_of(x)
    out = vx.reshape(shape)
    if not _tracked(x):
        return out

    def backward(g):
        x._accumulate(g.reshape(vx.shape))

    return _node(out, (x,), backward)


def stacked_matvec(mats, v):
    """``y[t] = mats[t] @ v`` for a constant stack of matrices.

    The matrix stack never receives gradients; the vector does.
    """
    vm = np.asarray(mats, dtype=np.float64)
    vv = value_of(v)
    out = vm @ vv
    if not _tracked(v):
        return out

    def backward(g):
        v._accumulate(np.einsum("tij,ti->j", vm, g))

    return _node(out, (v,), backward)


def ssq(x):
    """Scalar sum of squared entries."""
    vx = value_of(x)
    flat = vx.ravel()
    out = np.float64(flat @ flat)
    if not _tracked(x):
        return out

    def backward(g):
        x._accumulate((2.0 * float(g)) * vx)

    return _node(out, (x,), backward)


def backward(loss) -> None:
    """Propagate d(loss)/d(node) from a recorded scalar to every ancestor.

    Gradients accumulate into ``Var.grad``; parameters the loss never saw
    keep ``grad is None`` and read back as exact zeros.
    """
    if not isinstance(loss, Var):
        raise UsageError("backward target was not produced by recorded operations")
    if loss.value.size != 1:
        raise UsageError(f"backward target must be scalar, got shape {loss.value.shape}")

    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    loss._accumulate(np.ones_like(loss.value))
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

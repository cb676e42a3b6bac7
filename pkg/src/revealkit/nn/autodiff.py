"""Small reverse-mode differentiation engine over float64 numpy arrays.

Only the operations the pipeline needs are provided. Every op returns a
:class:`Var`; calling :meth:`Var.backward` on a scalar accumulates ``.grad``
on every upstream node that requires a gradient.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import expit


class Var:
    """A node in the computation graph.

    ``data`` is always a float64 ndarray. ``grad`` is populated by
    :meth:`backward` for nodes with ``requires_grad``.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False,
                 parents: tuple["Var", ...] = (),
                 grad_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._grad_fn = grad_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Var(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        order = _topo_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=np.float64)}
        for node in order:
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._grad_fn is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._grad_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # operator sugar
    def __add__(self, other): return add(self, other)
    def __radd__(self, other): return add(other, self)
    def __sub__(self, other): return sub(self, other)
    def __rsub__(self, other): return sub(other, self)
    def __mul__(self, other): return mul(self, other)
    def __rmul__(self, other): return mul(other, self)
    def __truediv__(self, other): return div(self, other)
    def __rtruediv__(self, other): return div(other, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, other): return matmul(self, other)


def _topo_order(root: Var) -> list[Var]:
    seen: set[int] = set()
    post: list[Var] = []
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            post.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    post.reverse()
    return post


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def value(x) -> np.ndarray:
    return x.data if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _make(data: np.ndarray, parents: tuple[Var, ...], grad_fn) -> Var:
    if any(p.requires_grad for p in parents):
        return Var(data, True, parents, grad_fn)
    return Var(data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# elementwise arithmetic

def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape),
                            _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


# unary nonlinearities

def sigmoid(a) -> Var:
    a = as_var(a)
    out = expit(a.data)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Var:
    a = as_var(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Var:
    a = as_var(a)
    mask = a.data > 0
    return _make(a.data * mask, (a,), lambda g: (g * mask,))


def absolute(a) -> Var:
    a = as_var(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), (a,), lambda g: (g * sign,))


# reductions and shape ops

def sum(a, axis=None, keepdims: bool = False) -> Var:  # noqa: A001
    a = as_var(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)
    return _make(out, (a,), grad_fn)


def mean(a, axis=None) -> Var:
    a = as_var(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(sum(a, axis=axis), 1.0 / n)


def reshape(a, shape) -> Var:
    a = as_var(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _scatter_rows(values: np.ndarray, ids: np.ndarray, n: int) -> np.ndarray:
    """``out[ids[i]] += values[i]`` for 2-D ``values``, via a sparse product."""
    S = sparse.csr_matrix((np.ones(len(ids)), (ids, np.arange(len(ids)))), shape=(n, len(ids)))
    return np.asarray(S @ values)


def take_rows(a, idx) -> Var:
    """Gather rows ``a[idx]``; repeated indices accumulate in backward."""
    a = as_var(a)
    idx = np.asarray(idx, dtype=np.intp)

    def grad_fn(g):
        if idx.ndim == 1 and a.data.ndim == 2:
            return (_scatter_rows(g, idx, a.shape[0]),)
        out = np.zeros_like(a.data)
        if idx.ndim == 0:
            out[idx] = g
            return (out,)
        np.add.at(out, idx, g)
        return (out,)
    return _make(a.data[idx], (a,), grad_fn)


def segment_sum(a, segment_ids, num_segments: int) -> Var:
    """Sum rows of ``a`` into ``num_segments`` buckets given by ``segment_ids``."""
    a = as_var(a)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if a.data.ndim == 2:
        out = _scatter_rows(a.data, ids, num_segments)
    else:
        out = np.zeros((num_segments,) + a.shape[1:])
        np.add.at(out, ids, a.data)
    return _make(out, (a,), lambda g: (g[ids],))


def pick(a, cols) -> Var:
    """Select ``a[i, cols[i]]`` for every row ``i``."""
    a = as_var(a)
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.shape[0])

    def grad_fn(g):
        out = np.zeros_like(a.data)
        out[rows, cols] = g
        return (out,)
    return _make(a.data[rows, cols], (a,), grad_fn)


# linear algebra

def matmul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make(a.data @ b.data, (a, b),
                 lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x, W, b=None) -> Var:
    """Affine map ``x @ W.T + b`` for row-batched ``x`` and ``W`` of shape [out, in]."""
    x, W = as_var(x), as_var(W)
    out = x.data @ W.data.T
    if b is None:
        return _make(out, (x, W), lambda g: (g @ W.data, g.T @ x.data))
    b = as_var(b)
    out = out + b.data
    return _make(out, (x, W, b),
                 lambda g: (g @ W.data, g.T @ x.data, g.sum(axis=0)))


def row_norm(a) -> Var:
    """Euclidean norm of each row. The gradient at a zero row is taken as zero."""
    a = as_var(a)
    n = np.sqrt((a.data * a.data).sum(axis=1))

    def grad_fn(g):
        safe = np.where(n > 0, n, 1.0)
        return ((g / safe)[:, None] * a.data * (n > 0)[:, None],)
    return _make(n, (a,), grad_fn)


def row_dot(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return _make((a.data * b.data).sum(axis=1), (a, b),
                 lambda g: (g[:, None] * b.data, g[:, None] * a.data))


def log_softmax(a) -> Var:
    """Row-wise log-softmax, shifted by the row max for stability."""
    a = as_var(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out = shifted - lse
    soft = np.exp(out)
    return _make(out, (a,),
                 lambda g: (g - soft * g.sum(axis=1, keepdims=True),))


def softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)

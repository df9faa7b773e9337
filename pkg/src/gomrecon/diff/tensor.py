"""Tape-based reverse-mode differentiation over numpy arrays.

Only the handful of operations the reconstruction pipeline needs are
provided. Every op records a closure computing its vector-Jacobian product;
:meth:`Tensor.backward` replays the tape in reverse topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

_GRAD_ENABLED = True
_BRANCH_LOGS: list[list] = []


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


@contextlib.contextmanager
def record_branches():
    """Collect the discrete choices (kink sides, clamp states) made inside the block.

    Piecewise ops call :func:`note_branch`; the yielded list can be hashed
    to tell whether two evaluations took the same smooth piece.
    """
    log: list = []
    _BRANCH_LOGS.append(log)
    try:
        yield log
    finally:
        _BRANCH_LOGS.remove(log)


def note_branch(*arrays):
    if _BRANCH_LOGS:
        key = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays)
        for log in _BRANCH_LOGS:
            log.append(key)


class Tensor:
    __array_priority__ = 1000
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, _parents=(), _vjp=None, name=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._vjp = _vjp
        self.name = name

    def __repr__(self):
        flag = ", requires_grad" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __len__(self):
        return len(self.data)

    def __float__(self):
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> Tensor:
        return Tensor(self.data)

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order = _toposort(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)


def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
    return order


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if like is not None and arr.dtype.kind == "f" and like.data.dtype.kind == "f":
        arr = arr.astype(like.data.dtype, copy=False)
    return Tensor(arr)


def _pair(a, b):
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    if ta is None:
        ta = as_tensor(a, tb)
    if tb is None:
        tb = as_tensor(b, ta)
    return ta, tb


def make(data, parents: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Wrap an op result, recording ``vjp`` only if a parent needs gradients."""
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), vjp)
    return Tensor(data)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---------------------------------------------------------------- arithmetic


def add(a, b):
    a, b = _pair(a, b)
    return make(a.data + b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = _pair(a, b)
    return make(a.data - b.data, (a, b),
                lambda g: (unbroadcast(g, a.shape), unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = _pair(a, b)
    return make(a.data * b.data, (a, b),
                lambda g: (unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data

    def vjp(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), vjp)


def neg(a):
    return make(-a.data, (a,), lambda g: (-g,))


def power(a, p: float):
    out = a.data ** p
    return make(out, (a,), lambda g: (g * p * a.data ** (p - 1),))


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2; use einsum")
    out = a.data @ b.data

    def vjp(g):
        ga = unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make(out, (a, b), vjp)


# ---------------------------------------------------------------- elementwise


def exp(a):
    out = np.exp(a.data)
    return make(out, (a,), lambda g: (g * out,))


def log(a):
    return make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a):
    out = np.sqrt(a.data)
    return make(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    out = np.tanh(a.data)
    return make(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 * (np.tanh(0.5 * a.data) + 1.0)
    return make(out, (a,), lambda g: (g * out * (1.0 - out),))


def absolute(a):
    note_branch(a.data > 0)
    return make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def leaky_relu(a, slope: float = 0.01):
    pos = a.data > 0
    note_branch(pos)
    out = np.where(pos, a.data, a.data * slope)
    return make(out, (a,), lambda g: (np.where(pos, g, g * slope),))


def clip(a, lo, hi):
    """Clamp with zero gradient wherever a bound binds."""
    inside = (a.data >= lo) & (a.data <= hi)
    note_branch(inside)
    out = np.clip(a.data, lo, hi)
    return make(out, (a,), lambda g: (g * inside,))


def where(cond, a, b):
    a, b = _pair(a, b)
    cond = np.asarray(cond)
    note_branch(cond)
    out = np.where(cond, a.data, b.data)

    def vjp(g):
        return (unbroadcast(np.where(cond, g, 0), a.shape),
                unbroadcast(np.where(cond, 0, g), b.shape))

    return make(out, (a, b), vjp)


# ---------------------------------------------------------------- reductions / shape


def tsum(a, axis=None, keepdims=False):
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return make(out, (a,), vjp)


def mean(a, axis=None, keepdims=False):
    n = a.data.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    return make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes=None):
    out = np.transpose(a.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return make(out, (a,), lambda g: (np.transpose(g, inv),))


def broadcast_to(a, shape):
    return make(np.broadcast_to(a.data, shape), (a,), lambda g: (unbroadcast(g, a.shape),))


def _is_basic_index(key) -> bool:
    items = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (int, np.integer, slice)) or k is None or k is Ellipsis for k in items)


def getitem(a, key):
    out = a.data[key]
    basic = _is_basic_index(key)

    def vjp(g):
        full = np.zeros_like(a.data)
        if basic:
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return make(out, (a,), vjp)


def scatter_rows(idx: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    """``out[idx[i]] += values[i]`` along axis 0, as a sparse product (``np.add.at`` is slow)."""
    idx = np.asarray(idx).reshape(-1)
    vals = np.asarray(values).reshape(len(idx), -1)
    S = sp.csr_matrix((np.ones(len(idx), dtype=vals.dtype), (idx, np.arange(len(idx)))), shape=(n, len(idx)))
    return np.asarray(S @ vals).reshape((n,) + np.shape(values)[1:])


def take(a, idx, axis: int = 0):
    """Gather along ``axis``; the backward pass scatter-adds."""
    idx = np.asarray(idx)
    out = np.take(a.data, idx, axis=axis)

    def vjp(g):
        gm = np.moveaxis(g, list(range(axis, axis + idx.ndim)), list(range(idx.ndim)))
        rest = gm.shape[idx.ndim:]
        full = scatter_rows(idx.reshape(-1), gm.reshape((-1,) + rest), a.shape[axis])
        return (np.moveaxis(full, 0, axis),)

    return make(out, (a,), vjp)


def _dtype_ref(ts: Sequence[Tensor]) -> Tensor:
    """Operand whose float dtype wins: differentiable ones first, then any float."""
    for t in ts:
        if t.requires_grad and t.data.dtype.kind == "f":
            return t
    return next((t for t in ts if t.data.dtype.kind == "f"), ts[0])


def concat(items: Sequence, axis: int = -1):
    ts = [as_tensor(t) for t in items]
    ref = _dtype_ref(ts)
    ts = [as_tensor(t.data, ref) if not t.requires_grad else t for t in ts]
    out = np.concatenate([t.data for t in ts], axis=axis)
    sizes = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def vjp(g):
        return tuple(np.split(g, sizes, axis=axis))

    return make(out, ts, vjp)


def stack(items: Sequence, axis: int = 0):
    ts = [as_tensor(t) for t in items]
    out = np.stack([t.data for t in ts], axis=axis)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return make(out, ts, vjp)


def einsum(subscripts: str, *operands):
    subs = subscripts.replace(" ", "")
    lhs, out_sub = subs.split("->")
    in_subs = lhs.split(",")
    ts = [as_tensor(o) for o in operands]
    ref = _dtype_ref(ts)
    ts = [as_tensor(t.data, ref) if not t.requires_grad else t for t in ts]
    # BLAS-backed paths pay off for big operands or three-way products
    opt = len(ts) > 2 or max(t.data.size for t in ts) >= 4096
    out = np.einsum(subs, *[t.data for t in ts], optimize=opt)

    def vjp(g):
        grads = []
        for k, sk in enumerate(in_subs):
            if not ts[k].requires_grad:
                grads.append(None)
                continue
            others = [(in_subs[i], ts[i].data) for i in range(len(ts)) if i != k]
            avail = set(out_sub).union(*[set(s) for s, _ in others])
            tgt = "".join(c for c in sk if c in avail)
            expr = ",".join([out_sub] + [s for s, _ in others]) + "->" + tgt
            r = np.einsum(expr, g, *[d for _, d in others], optimize=opt)
            if tgt != sk:
                shape = [ts[k].shape[i] if c in avail else 1 for i, c in enumerate(sk)]
                r = np.broadcast_to(r.reshape(shape), ts[k].shape).copy()
            grads.append(r)
        return tuple(grads)

    return make(out, ts, vjp)


def softmax(a, axis: int = -1):
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make(out, (a,), vjp)


def custom(forward_out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable) -> Tensor:
    """Record an op whose forward value was computed outside the tape."""
    return make(forward_out, inputs, vjp)


def cross(a, b):
    a, b = _pair(a, b)
    out = np.cross(a.data, b.data)

    def vjp(g):
        ga = np.cross(b.data, g) if a.requires_grad else None
        gb = np.cross(g, a.data) if b.requires_grad else None
        return unbroadcast(ga, a.shape) if ga is not None else None, \
            unbroadcast(gb, b.shape) if gb is not None else None

    return make(out, (a, b), vjp)


def norm(a, axis: int = -1, keepdims: bool = False):
    return sqrt(tsum(a * a, axis=axis, keepdims=keepdims))

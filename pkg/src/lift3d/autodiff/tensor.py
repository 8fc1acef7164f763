"""Dense tensors with reverse-mode automatic differentiation.

Every differentiable operation returns a new :class:`Tensor` that remembers
its parents and a local gradient rule. :func:`backward` walks the recorded
graph once in reverse topological order and accumulates gradients.

Inside :func:`no_grad` nothing is recorded, which keeps inference cheap and
lets several workers evaluate frozen parameters concurrently.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32

_state = threading.local()


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    """A numpy array plus the bookkeeping needed to differentiate through it."""

    __slots__ = ("data", "requires_grad", "name", "op", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.name = name
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward: Callable | None = None

    # ------------------------------------------------------------------ basics
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{flag})"

    # --------------------------------------------------------------- operators
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

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    if dtype is None and isinstance(x, np.ndarray) and np.issubdtype(x.dtype, np.floating):
        dtype = x.dtype
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))


def make_node(value: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    """Wrap ``value`` as the output of an operation.

    ``backward(g)`` receives the upstream gradient and returns one gradient
    (or ``None``) per parent. Custom primitives such as the hash encoding
    are registered through this function.
    """
    out = Tensor(value)
    out.op = op
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


# ------------------------------------------------------------------- helpers
def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None


def _binary(a, b):
    if not isinstance(a, Tensor):
        a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    if not isinstance(b, Tensor):
        b = as_tensor(b, like=a)
    return a, b


# ---------------------------------------------------------------- arithmetic
def add(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_node(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_node(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "mul")

    def bw(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(a.data * b.data, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = _binary(a, b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = _unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw, "div")


def neg(a: Tensor) -> Tensor:
    return make_node(-a.data, (a,), lambda g: (-g,), "neg")


def matmul(a, b) -> Tensor:
    a, b = _binary(a, b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: only 1-D/2-D operands supported, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 1:
                ga = np.multiply.outer(g, b.data) if a.ndim == 2 else g * b.data
            else:
                ga = g @ b.data.T
        if b.requires_grad:
            if a.ndim == 1:
                gb = np.multiply.outer(a.data, g) if b.ndim == 2 else g * a.data
            else:
                gb = a.data.T @ g
        return ga, gb

    return make_node(a.data @ b.data, (a, b), bw, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D tensor, got {a.shape}")
    return make_node(a.data.T, (a,), lambda g: (g.T,), "transpose")


# ---------------------------------------------------------------- pointwise
def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return make_node(out, (a,), lambda g: (g * out,), "exp")


def log(a: Tensor) -> Tensor:
    return make_node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a: Tensor) -> Tensor:
    x = np.clip(a.data, -60.0, 60.0)
    out = 1.0 / (1.0 + np.exp(-x))

    def bw(g):
        return (g * out * (1.0 - out),)

    return make_node(out.astype(a.dtype, copy=False), (a,), bw, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return make_node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return make_node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def softplus(a: Tensor, beta: float = 1.0) -> Tensor:
    """log(1 + exp(beta x)) / beta, evaluated without overflow or denormals."""
    b = a.dtype.type(beta)
    bx = np.multiply(a.data, b, out=np.empty_like(a.data))
    e = np.abs(bx, out=np.empty_like(bx))
    # exp(-40) is far below float precision relative to 1 and keeps clear of denormals
    np.minimum(e, 40.0, out=e)
    np.negative(e, out=e)
    np.exp(e, out=e)
    out = np.maximum(bx, 0, out=bx)
    out += np.log1p(e)
    out /= b

    def bw(g):
        # sigmoid(beta x) = 1 - exp(-beta * softplus(x)), via expm1 for small values
        sig = np.multiply(out, b, out=np.empty_like(out))
        np.minimum(sig, 40.0, out=sig)
        np.negative(sig, out=sig)
        np.expm1(sig, out=sig)
        np.negative(sig, out=sig)
        sig *= g
        return (sig,)

    return make_node(out, (a,), bw, "softplus")


def square(a: Tensor) -> Tensor:
    return make_node(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return make_node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def abs_(a: Tensor) -> Tensor:
    return make_node(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def clamp(a: Tensor, lo=None, hi=None) -> Tensor:
    out = np.clip(a.data, lo, hi)
    inside = np.ones(a.shape, dtype=bool)
    if lo is not None:
        inside &= a.data >= lo
    if hi is not None:
        inside &= a.data <= hi
    return make_node(out, (a,), lambda g: (g * inside,), "clamp")


# --------------------------------------------------------------- reductions
def sum_(a: Tensor, axis=None, keepdims=False) -> Tensor:
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=a.dtype)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return make_node(out, (a,), bw, "sum")


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    n = a.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return sum_(a, axis, keepdims) * (1.0 / n)


def l2_normalize(a: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = a.data / norm

    def bw(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return ((g - out * dot) / norm,)

    return make_node(out, (a,), bw, "l2_normalize")


def norm(a: Tensor, axis: int = -1, eps: float = 0.0) -> Tensor:
    """Euclidean norm along ``axis`` (keepdims=False)."""
    out = np.sqrt((a.data * a.data).sum(axis=axis) + eps)

    def bw(g):
        safe = np.where(out > 0, out, 1.0)
        return (np.expand_dims(g / safe, axis) * a.data,)

    return make_node(out, (a,), bw, "norm")


# ---------------------------------------------------------------- structure
def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: empty input")
    ref = ts[0]
    ax = axis % ref.ndim
    for t in ts[1:]:
        if t.ndim != ref.ndim or any(
            i != ax and s != r for i, (s, r) in enumerate(zip(t.shape, ref.shape))
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {axis}")
    dtype = np.result_type(*[t.dtype for t in ts])
    out = np.concatenate([t.data for t in ts], axis=ax).astype(dtype, copy=False)
    bounds = np.cumsum([0] + [t.shape[ax] for t in ts])

    def bw(g):
        sl = [slice(None)] * g.ndim
        grads = []
        for i, t in enumerate(ts):
            if not t.requires_grad:
                grads.append(None)
                continue
            sl[ax] = slice(bounds[i], bounds[i + 1])
            grads.append(g[tuple(sl)])
        return tuple(grads)

    return make_node(out, ts, bw, "concat")


def reshape(a: Tensor, shape) -> Tensor:
    return make_node(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def _is_basic(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice, type(Ellipsis), type(None))) for i in items)


def getitem(a: Tensor, index) -> Tensor:
    out = a.data[index]
    basic = _is_basic(index)

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return make_node(np.ascontiguousarray(out), (a,), bw, "getitem")


def take_rows(a: Tensor, rows) -> Tensor:
    """Gather rows of a 2-D tensor; the gradient scatters back into those rows only."""
    rows = np.asarray(rows, dtype=np.int64)
    out = a.data[rows]

    def bw(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, rows, g)
        return (full,)

    return make_node(out, (a,), bw, "take_rows")


def cumprod_exclusive(a: Tensor, axis: int = -1) -> Tensor:
    """out[..., i] = prod_{j<i} a[..., j] (so out[..., 0] = 1)."""
    x = np.moveaxis(a.data, axis, -1)
    n = x.shape[-1]
    out = np.empty_like(x)
    out[..., 0] = 1.0
    if n > 1:
        np.cumprod(x[..., :-1], axis=-1, out=out[..., 1:])

    def bw(g):
        # grad_k = out_k * s_k with s_k = sum_{i>k} g_i prod_{k<j<i} a_j; no division by a
        gm = np.moveaxis(g, axis, -1)
        s = np.zeros_like(x)
        for k in range(n - 2, -1, -1):
            s[..., k] = gm[..., k + 1] + x[..., k + 1] * s[..., k + 1]
        return (np.moveaxis(out * s, -1, axis),)

    return make_node(np.moveaxis(out, -1, axis), (a,), bw, "cumprod_exclusive")


def where(cond: np.ndarray, a, b) -> Tensor:
    a, b = _binary(a, b)
    cond = np.asarray(cond, dtype=bool)
    out = np.where(cond, a.data, b.data)

    def bw(g):
        ga = _unbroadcast(np.where(cond, g, 0), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.where(cond, 0, g), b.shape) if b.requires_grad else None
        return ga, gb

    return make_node(out, (a, b), bw, "where")


# ------------------------------------------------------------------ backward
def _toposort(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
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
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def gradients(loss: Tensor, wrt: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of a scalar ``loss`` with respect to each tensor in ``wrt``.

    Tensors the loss does not depend on get zeros.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    targets = {id(t): t for t in wrt}
    found: dict[int, np.ndarray] = {}
    if loss.requires_grad:
        grads = {id(loss): np.ones(loss.shape, dtype=loss.dtype)}
        for node in reversed(_toposort(loss)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if id(node) in targets:
                found[id(node)] = g
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg
    out = []
    for t in wrt:
        g = found.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else np.asarray(g, dtype=t.dtype).reshape(t.shape))
    return out

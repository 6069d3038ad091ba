"""Reverse-mode tape over dense float64 numpy arrays.

Every operation on a :class:`Tensor` that requires gradients appends a node to an
implicit tape. Node ids come from a global monotone counter, so sorting the
reachable nodes by id gives a valid topological order for the backward sweep.
"""
from __future__ import annotations

import itertools
import math
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import special

_ids = itertools.count()
_state = {"grad": True, "check_finite": False}

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class AutodiffError(RuntimeError):
    """Base class for engine errors."""


class ShapeError(AutodiffError, ValueError):
    def __init__(self, message: str, node: str | int | None = None):
        super().__init__(message if node is None else f"node {node}: {message}")
        self.node = node


class NonFiniteError(AutodiffError, FloatingPointError):
    def __init__(self, node_id: int, op: str):
        super().__init__(f"non-finite value produced by node {node_id} ({op})")
        self.node_id = node_id
        self.op = op


class UnsupportedOperation(AutodiffError, NotImplementedError):
    pass


@contextmanager
def no_grad():
    """Evaluate without recording anything on the tape."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextmanager
def check_finite(enabled: bool = True):
    """Raise :class:`NonFiniteError` as soon as an op yields NaN or Inf."""
    prev = _state["check_finite"]
    _state["check_finite"] = enabled
    try:
        yield
    finally:
        _state["check_finite"] = prev


def grad_enabled() -> bool:
    return _state["grad"]


def unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


class Tensor:
    __slots__ = ("data", "requires_grad", "parents", "backward_fn", "op", "id", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn = None
        self.op = "leaf"
        self.id = next(_ids)
        self.grad: np.ndarray | None = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"], backward_fn, op: str) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.id = next(_ids)
        out.op = op
        out.grad = None
        out.name = None
        if _state["check_finite"] and not np.all(np.isfinite(data)):
            raise NonFiniteError(out.id, op)
        if _state["grad"] and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
        else:
            out.requires_grad = False
            out.parents = ()
            out.backward_fn = None
        return out

    # -- basic properties -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- arithmetic -------------------------------------------------------------
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

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims: bool = False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def swapaxes(self, a: int, b: int):
        return swapaxes(self, a, b)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# elementwise binary ops
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(g, sb)

    return Tensor._make(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape

    def bw(g):
        return unbroadcast(g, sa), unbroadcast(-g, sb)

    return Tensor._make(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def bw(g):
        return (unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return Tensor._make(ad * bd, (a, b), bw, "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return (unbroadcast(g / bd, ad.shape) if a.requires_grad else None,
                unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None)

    return Tensor._make(out, (a, b), bw, "div")


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise UnsupportedOperation("tensor exponents are not supported")
    ad = a.data

    def bw(g):
        return (g * p * ad ** (p - 1),)

    return Tensor._make(ad ** p, (a,), bw, "pow")


# ---------------------------------------------------------------------------
# linear algebra and shape ops
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul needs at least 1-d operands", "matmul")
    if a.ndim == 1:
        return reshape(matmul(reshape(a, (1,) + a.shape), b), b.shape[:-2] + b.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, b.shape + (1,))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims {a.shape} @ {b.shape}", "matmul")
    ad, bd = a.data, b.data

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape)
        if b.requires_grad:
            if bd.ndim == 2:
                k = ad.shape[-1]
                a2 = np.broadcast_to(ad, g.shape[:-1] + (k,)).reshape(-1, k)
                gb = a2.T @ g.reshape(-1, g.shape[-1])
            else:
                gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape)
        return ga, gb

    return Tensor._make(ad @ bd, (a, b), bw, "matmul")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return Tensor._make(a.data.reshape(shape), (a,), lambda g: (g.reshape(src),), "reshape")


def swapaxes(a, i: int, j: int) -> Tensor:
    a = as_tensor(a)
    return Tensor._make(np.swapaxes(a.data, i, j), (a,), lambda g: (np.swapaxes(g, i, j),), "swapaxes")


def expand_dims(a, axis: int) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return Tensor._make(np.expand_dims(a.data, axis), (a,), lambda g: (g.reshape(src),), "expand_dims")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    return Tensor._make(np.broadcast_to(a.data, shape), (a,), lambda g: (unbroadcast(g, src),), "broadcast")


def _is_basic_index(idx) -> bool:
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, np.integer)) or i is Ellipsis or i is None for i in items)


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    basic = _is_basic_index(idx)

    def bw(g):
        z = np.zeros(src)
        if basic:
            z[idx] = g
        else:
            np.add.at(z, idx, g)
        return (z,)

    return Tensor._make(a.data[idx], (a,), bw, "getitem")


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return Tensor._make(np.concatenate([p.data for p in parts], axis=axis), parts, bw, "concat")


def stack(parts: Sequence, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(np.stack([p.data for p in parts], axis=axis), parts, bw, "stack")


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src),)

    return Tensor._make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    n = a.data.size if axis is None else int(np.prod([src[ax] for ax in np.atleast_1d(axis)]))

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, src),)

    return Tensor._make(np.mean(a.data, axis=axis, keepdims=keepdims), (a,), bw, "mean")


# ---------------------------------------------------------------------------
# elementwise unary ops
# ---------------------------------------------------------------------------

def _unary(a, value: np.ndarray, deriv: Callable[[], np.ndarray], op: str) -> Tensor:
    return Tensor._make(value, (a,), lambda g: (g * deriv(),), op)


def exp(a) -> Tensor:
    a = as_tensor(a)
    v = np.exp(a.data)
    return _unary(a, v, lambda: v, "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _unary(a, np.log(ad), lambda: 1.0 / ad, "log")


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    v = np.sqrt(a.data)
    return _unary(a, v, lambda: 0.5 / v, "sqrt")


def sin(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _unary(a, np.sin(ad), lambda: np.cos(ad), "sin")


def cos(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _unary(a, np.cos(ad), lambda: -np.sin(ad), "cos")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    v = np.tanh(a.data)
    return _unary(a, v, lambda: 1.0 - v * v, "tanh")


def erf(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _unary(a, special.erf(ad), lambda: (2.0 / math.sqrt(math.pi)) * np.exp(-ad * ad), "erf")


def _phi(x: np.ndarray) -> np.ndarray:
    return _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _Phi(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + special.erf(x / _SQRT2))


def gelu(a) -> Tensor:
    """Exact (erf) GELU, x * Phi(x)."""
    a = as_tensor(a)
    x = a.data
    cdf = _Phi(x)
    return _unary(a, x * cdf, lambda: cdf + x * _phi(x), "gelu")


def gelu_grad(a) -> Tensor:
    """First derivative of GELU as its own differentiable op."""
    a = as_tensor(a)
    x = a.data
    pdf = _phi(x)
    return _unary(a, _Phi(x) + x * pdf, lambda: pdf * (2.0 - x * x), "gelu_grad")


def gelu_grad2(a) -> Tensor:
    """Second derivative of GELU, phi(x) (2 - x^2)."""
    a = as_tensor(a)
    x = a.data
    pdf = _phi(x)
    return _unary(a, pdf * (2.0 - x * x), lambda: pdf * (x ** 3 - 4.0 * x), "gelu_grad2")


# ---------------------------------------------------------------------------
# fused ops
# ---------------------------------------------------------------------------

def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return Tensor._make(s, (a,), bw, "softmax")


def layer_norm(a, gain, bias, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then scale and shift."""
    a, gain, bias = as_tensor(a), as_tensor(gain), as_tensor(bias)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    c = x - mu
    var = (c * c).mean(axis=-1, keepdims=True)
    r = 1.0 / np.sqrt(var + eps)
    n = c * r
    gd = gain.data

    def bw(g):
        gn = g * gd
        ga = None
        if a.requires_grad:
            ga = r * (gn - gn.mean(axis=-1, keepdims=True) - n * (gn * n).mean(axis=-1, keepdims=True))
        return (ga,
                unbroadcast(g * n, gd.shape) if gain.requires_grad else None,
                unbroadcast(g, bias.shape) if bias.requires_grad else None)

    return Tensor._make(n * gd + bias.data, (a, gain, bias), bw, "layer_norm")


def huber(r, delta: float = 1.0) -> Tensor:
    """Elementwise Huber penalty: r^2/2 inside |r| <= delta, linear outside."""
    r = as_tensor(r)
    x = r.data
    ax = np.abs(x)
    v = np.where(ax <= delta, 0.5 * x * x, delta * (ax - 0.5 * delta))
    return Tensor._make(v, (r,), lambda g: (g * np.clip(x, -delta, delta),), "huber")


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def _reachable(output: Tensor) -> list[Tensor]:
    seen: dict[int, Tensor] = {}
    stack = [output]
    while stack:
        node = stack.pop()
        if node.id in seen or not node.requires_grad:
            continue
        seen[node.id] = node
        stack.extend(node.parents)
    return sorted(seen.values(), key=lambda n: n.id, reverse=True)


def grad(output: Tensor, wrt: Iterable[Tensor], seed: np.ndarray | None = None) -> list[np.ndarray]:
    """Gradients of ``output`` with respect to ``wrt``.

    Leaves that ``output`` does not depend on receive exact zeros.
    """
    wrt = list(wrt)
    if seed is None:
        if output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got shape {output.shape}", output.id)
        seed = np.ones_like(output.data)
    keep = {t.id for t in wrt}
    grads: dict[int, np.ndarray] = {output.id: np.asarray(seed, dtype=np.float64)}
    if output.requires_grad:
        for node in _reachable(output):
            g = grads.get(node.id) if node.id in keep else grads.pop(node.id, None)
            if g is None or node.backward_fn is None:
                continue
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                prev = grads.get(parent.id)
                grads[parent.id] = pg if prev is None else prev + pg
    out = []
    for t in wrt:
        g = grads.get(t.id)
        out.append(np.zeros(t.shape) if g is None else np.array(np.broadcast_to(g, t.shape)))
    return out


def backward(output: Tensor, leaves: Iterable[Tensor]) -> None:
    """Accumulate gradients of ``output`` into ``leaf.grad``."""
    leaves = list(leaves)
    for leaf, g in zip(leaves, grad(output, leaves)):
        leaf.grad = g if leaf.grad is None else leaf.grad + g

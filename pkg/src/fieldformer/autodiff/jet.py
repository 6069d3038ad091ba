"""Order-2 Taylor jets whose arithmetic is recorded on the reverse tape.

A :class:`Jet` carries a value and its first and second tangents along ``K``
coordinate directions at once. Tangent arrays have shape ``(K,) + value.shape``;
``None`` stands for an identically zero tangent. Because every jet component is
a :class:`~fieldformer.autodiff.tensor.Tensor`, any function of the propagated
derivatives can be differentiated in reverse mode with respect to parameters.
"""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor, as_tensor


def _lift(t: Tensor | None, ndim: int) -> Tensor | None:
    """Pad a tangent so that its value part has ``ndim`` dims (broadcast-aligned)."""
    if t is None:
        return None
    have = t.ndim - 1
    if have >= ndim:
        return t
    return T.reshape(t, (t.shape[0],) + (1,) * (ndim - have) + t.shape[1:])


def _plus(a: Tensor | None, b: Tensor | None) -> Tensor | None:
    if a is None:
        return b
    if b is None:
        return a
    return a + b


def _times(a: Tensor | None, b) -> Tensor | None:
    return None if a is None else a * b


def _tangent_axis(axis):
    if axis is None:
        return None
    if isinstance(axis, tuple):
        return tuple(_tangent_axis(a) for a in axis)
    return axis if axis < 0 else axis + 1


class Jet:
    __slots__ = ("val", "d1", "d2", "order")

    def __init__(self, val, d1: Tensor | None = None, d2: Tensor | None = None, order: int = 2):
        self.val = as_tensor(val)
        self.d1 = d1
        self.d2 = d2 if order >= 2 else None
        self.order = order

    @classmethod
    def seed(cls, z, directions: Sequence[int], order: int = 2) -> "Jet":
        """Jet for coordinates ``z`` (..., D) with unit tangents along ``directions``."""
        z = as_tensor(z)
        d1 = np.zeros((len(directions),) + z.shape)
        for k, axis in enumerate(directions):
            d1[k, ..., axis] = 1.0
        return cls(z, Tensor(d1), None, order)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    def _same(self, val, d1, d2) -> "Jet":
        return Jet(val, d1, d2, self.order)

    # -- arithmetic -----------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, Jet):
            nd = max(self.ndim, other.ndim)
            return self._same(self.val + other.val,
                              _plus(_lift(self.d1, nd), _lift(other.d1, nd)),
                              _plus(_lift(self.d2, nd), _lift(other.d2, nd)))
        other = as_tensor(other)
        nd = max(self.ndim, other.ndim)
        return self._same(self.val + other, _lift(self.d1, nd), _lift(self.d2, nd))

    __radd__ = __add__

    def __neg__(self):
        return self._same(-self.val, _times(self.d1, -1.0), _times(self.d2, -1.0))

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            nd = max(self.ndim, other.ndim)
            a1, a2 = _lift(self.d1, nd), _lift(self.d2, nd)
            b1, b2 = _lift(other.d1, nd), _lift(other.d2, nd)
            a, b = self.val, other.val
            d1 = _plus(_times(a1, b), _times(b1, a))
            d2 = None
            if self.order >= 2:
                cross = None if a1 is None or b1 is None else 2.0 * a1 * b1
                d2 = _plus(_plus(_times(a2, b), _times(b2, a)), cross)
            return self._same(a * b, d1, d2)
        other = as_tensor(other)
        nd = max(self.ndim, other.ndim)
        return self._same(self.val * other, _times(_lift(self.d1, nd), other), _times(_lift(self.d2, nd), other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * reciprocal(other)
        return self * (1.0 / as_tensor(other))

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, p: float):
        return apply(self,
                     lambda a: a ** p,
                     lambda a: p * a ** (p - 1),
                     lambda a: p * (p - 1) * a ** (p - 2))

    def __matmul__(self, other):
        if isinstance(other, Jet):
            a, b = self.val, other.val
            nd = max(a.ndim, b.ndim)
            a1, a2 = _lift(self.d1, nd), _lift(self.d2, nd)
            b1, b2 = _lift(other.d1, nd), _lift(other.d2, nd)
            d1 = _plus(None if a1 is None else a1 @ b, None if b1 is None else a @ b1)
            d2 = None
            if self.order >= 2:
                cross = None if a1 is None or b1 is None else 2.0 * (a1 @ b1)
                d2 = _plus(_plus(None if a2 is None else a2 @ b, None if b2 is None else a @ b2), cross)
            return self._same(a @ b, d1, d2)
        other = as_tensor(other)
        nd = max(self.ndim, other.ndim)
        return self._same(self.val @ other,
                          None if self.d1 is None else _lift(self.d1, nd) @ other,
                          None if self.d2 is None else _lift(self.d2, nd) @ other)

    def __rmatmul__(self, other):
        other = as_tensor(other)
        nd = max(self.ndim, other.ndim)
        return self._same(other @ self.val,
                          None if self.d1 is None else other @ _lift(self.d1, nd),
                          None if self.d2 is None else other @ _lift(self.d2, nd))

    # -- linear structural ops ------------------------------------------------
    def _full(self, t: Tensor | None) -> Tensor | None:
        if t is None:
            return None
        want = (t.shape[0],) + self.shape
        return t if t.shape == want else T.broadcast_to(t, want)

    def _map(self, fn_val: Callable, fn_tan: Callable) -> "Jet":
        return self._same(fn_val(self.val),
                          None if self.d1 is None else fn_tan(self._full(self.d1)),
                          None if self.d2 is None else fn_tan(self._full(self.d2)))

    def __getitem__(self, idx):
        idx_t = idx if isinstance(idx, tuple) else (idx,)
        tan_idx = idx_t if idx_t and idx_t[0] is Ellipsis else (slice(None),) + idx_t
        return self._map(lambda v: v[idx], lambda t: t[tan_idx])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        new = self.val.data.reshape(shape).shape
        return self._map(lambda v: T.reshape(v, new), lambda t: T.reshape(t, (t.shape[0],) + new))

    def swapaxes(self, a: int, b: int):
        return self._map(lambda v: T.swapaxes(v, a, b),
                         lambda t: T.swapaxes(t, _tangent_axis(a), _tangent_axis(b)))

    def sum(self, axis=None, keepdims: bool = False):
        if axis is None:
            axis = tuple(range(-self.ndim, 0))
        return self._map(lambda v: T.tsum(v, axis, keepdims),
                         lambda t: T.tsum(t, _tangent_axis(axis), keepdims))

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            axis = tuple(range(-self.ndim, 0))
        return self._map(lambda v: T.mean(v, axis, keepdims),
                         lambda t: T.mean(t, _tangent_axis(axis), keepdims))

    def tangent(self, order: int, k: int) -> Tensor:
        """Tangent ``order`` along direction ``k`` (zeros when absent)."""
        t = self.d1 if order == 1 else self.d2
        if t is None:
            return Tensor(np.zeros(self.shape))
        return self._full(t)[k]


def apply(x: Jet, f: Callable, fp: Callable, fpp: Callable) -> Jet:
    """Push an elementwise scalar function through a jet (truncated Faa di Bruno)."""
    a = x.val
    v = f(a)
    if x.d1 is None and x.d2 is None:
        return Jet(v, None, None, x.order)
    g1 = fp(a)
    d1 = _times(x.d1, g1)
    d2 = None
    if x.order >= 2:
        sq = None if x.d1 is None else fpp(a) * (x.d1 * x.d1)
        d2 = _plus(sq, _times(x.d2, g1))
    return Jet(v, d1, d2, x.order)


def reciprocal(x: Jet) -> Jet:
    return apply(x, lambda a: 1.0 / a, lambda a: -1.0 / (a * a), lambda a: 2.0 / (a * a * a))


def concat(parts: Sequence, axis: int = -1) -> Jet:
    """Concatenate jets (or constant tensors) along a negative axis."""
    if axis >= 0:
        raise ValueError("jet concat needs a negative axis")
    jets = [p for p in parts if isinstance(p, Jet)]
    order = jets[0].order
    ndir = None
    for j in jets:
        for t in (j.d1, j.d2):
            if t is not None:
                ndir = t.shape[0]
    vals = [p.val if isinstance(p, Jet) else as_tensor(p) for p in parts]
    val = T.concat(vals, axis)

    def tangents(which: str):
        if all(getattr(j, which) is None for j in jets):
            return None
        pieces = []
        for p, v in zip(parts, vals):
            t = getattr(p, which) if isinstance(p, Jet) else None
            if t is None:
                t = Tensor(np.zeros((ndir,) + v.shape))
            pieces.append(t)
        return T.concat(pieces, axis)

    return Jet(val, tangents("d1"), tangents("d2") if order >= 2 else None, order)

"""Ops that accept either plain tensors or jets.

Model code is written once against these functions; passing a :class:`Jet`
propagates coordinate derivatives alongside the value.
"""
from __future__ import annotations

from . import tensor as T
from .jet import Jet, apply, concat as jet_concat
from .tensor import Tensor


def linear(x, weight, bias=None):
    y = x @ weight
    return y if bias is None else y + bias


def gelu(x):
    if isinstance(x, Jet):
        return apply(x, T.gelu, T.gelu_grad, T.gelu_grad2)
    return T.gelu(x)


def sin(x):
    if isinstance(x, Jet):
        return apply(x, T.sin, T.cos, lambda a: -T.sin(a))
    return T.sin(x)


def cos(x):
    if isinstance(x, Jet):
        return apply(x, T.cos, lambda a: -T.sin(a), lambda a: -T.cos(a))
    return T.cos(x)


def exp(x):
    if isinstance(x, Jet):
        return apply(x, T.exp, T.exp, T.exp)
    return T.exp(x)


def tanh(x):
    if isinstance(x, Jet):
        t = T.tanh(x.val)
        s = 1.0 - t * t
        return apply(x, lambda a: t, lambda a: s, lambda a: -2.0 * t * s)
    return T.tanh(x)


def softmax(x, axis: int = -1):
    if not isinstance(x, Jet):
        return T.softmax(x, axis)
    s = T.softmax(x.val, axis)
    if x.d1 is None:
        return Jet(s, None, None, x.order)
    a1 = x._full(x.d1)
    centered1 = a1 - (s * a1).sum(axis=axis, keepdims=True)
    s1 = s * centered1
    s2 = None
    if x.order >= 2:
        inner = (s1 * a1).sum(axis=axis, keepdims=True)
        s2 = s1 * centered1 - s * inner
        if x.d2 is not None:
            a2 = x._full(x.d2)
            s2 = s2 + s * (a2 - (s * a2).sum(axis=axis, keepdims=True))
    return Jet(s, s1, s2, x.order)


def layer_norm(x, gain, bias, eps: float = 1e-5):
    if not isinstance(x, Jet):
        return T.layer_norm(x, gain, bias, eps)
    a = x.val
    c = a - a.mean(axis=-1, keepdims=True)
    v = (c * c).mean(axis=-1, keepdims=True)
    r = (v + eps) ** -0.5
    y = T.layer_norm(a, gain, bias, eps)
    if x.d1 is None:
        return Jet(y, None, None, x.order)
    a1 = x._full(x.d1)
    c1 = a1 - a1.mean(axis=-1, keepdims=True)
    v1 = 2.0 * (c * c1).mean(axis=-1, keepdims=True)
    r3 = r * r * r
    r1 = -0.5 * r3 * v1
    n1 = c1 * r + c * r1
    n2 = None
    if x.order >= 2:
        v2 = 2.0 * (c1 * c1).mean(axis=-1, keepdims=True)
        if x.d2 is not None:
            a2 = x._full(x.d2)
            c2 = a2 - a2.mean(axis=-1, keepdims=True)
            v2 = v2 + 2.0 * (c * c2).mean(axis=-1, keepdims=True)
        else:
            c2 = None
        r2 = 0.75 * r3 * r * r * v1 * v1 - 0.5 * r3 * v2
        n2 = 2.0 * c1 * r1 + c * r2
        if c2 is not None:
            n2 = n2 + c2 * r
    return Jet(y, n1 * gain, None if n2 is None else n2 * gain, x.order)


def concat(parts, axis: int = -1):
    if any(isinstance(p, Jet) for p in parts):
        return jet_concat(parts, axis)
    return T.concat(parts, axis)


def value(x) -> Tensor:
    return x.val if isinstance(x, Jet) else x

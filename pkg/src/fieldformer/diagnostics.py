"""Derivative and invariance self-checks behind ``fieldformer gradcheck``.

First-order checks compare reverse-mode gradients with central differences;
second-order checks compare jet second tangents with central differences of the
jet first tangent. Errors are max |AD - FD| scaled by max |FD| (floored at 1),
which stays meaningful when individual gradient entries vanish.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import Jet, Tensor, coordinate_partials, grad, no_grad
from .autodiff import functional as F
from .autodiff import tensor as T
from .simulators.grid import make_rng

FIRST_ORDER_TOL = 1e-6
SECOND_ORDER_TOL = 1e-4


@dataclass
class CheckResult:
    name: str
    error: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.error) and self.error < self.tol)


def scaled_error(ad: np.ndarray, fd: np.ndarray) -> float:
    ad, fd = np.asarray(ad), np.asarray(fd)
    return float(np.max(np.abs(ad - fd)) / max(1.0, float(np.max(np.abs(fd)))))


def fd_gradient(f: Callable[[list[np.ndarray]], float], xs: list[np.ndarray], eps: float = 1e-6) -> list[np.ndarray]:
    out = []
    for a in range(len(xs)):
        g = np.zeros_like(xs[a])
        flat = xs[a].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(xs)
            flat[i] = orig - eps
            fm = f(xs)
            flat[i] = orig
            g.reshape(-1)[i] = (fp - fm) / (2 * eps)
        out.append(g)
    return out


def check_first_order(name: str, fn: Callable, shapes: list[tuple], rng: np.random.Generator,
                      positive: bool = False) -> CheckResult:
    """Gradient of sum(w * fn(*inputs)) with a random weighting w."""
    xs = [rng.uniform(0.5, 1.5, s) if positive else rng.standard_normal(s) for s in shapes]
    out_shape = np.shape(fn(*[Tensor(x) for x in xs]).data)
    w = rng.standard_normal(out_shape)

    def scalar(arrs):
        with no_grad():
            return float(np.sum(w * fn(*[Tensor(a) for a in arrs]).data))

    leaves = [Tensor(x.copy(), requires_grad=True) for x in xs]
    out = T.tsum(fn(*leaves) * Tensor(w))
    ad = grad(out, leaves)
    fd = fd_gradient(scalar, [x.copy() for x in xs])
    return CheckResult(name, max(scaled_error(a, f) for a, f in zip(ad, fd)), FIRST_ORDER_TOL)


def check_second_order(name: str, fn: Callable, dim: int, rng: np.random.Generator, eps: float = 1e-5) -> CheckResult:
    """Jet second tangents of fn: R^dim -> R^k against differences of the first tangents."""
    x = rng.standard_normal((4, dim)) * 0.7
    dirs = list(range(dim))

    def tangents(p):
        with no_grad():
            j = fn(Jet.seed(p, dirs, order=2))
            return (np.stack([j.tangent(1, k).data for k in dirs]),
                    np.stack([j.tangent(2, k).data for k in dirs]))

    _, d2 = tangents(x)
    fd = np.zeros_like(d2)
    for k in range(dim):
        e = np.zeros(dim)
        e[k] = eps
        p1, _ = tangents(x + e)
        m1, _ = tangents(x - e)
        fd[k] = (p1[k] - m1[k]) / (2 * eps)
    return CheckResult(name, scaled_error(d2, fd), SECOND_ORDER_TOL)


def _primitives():
    """(name, fn, input shapes, positive-domain flag)."""
    return [
        ("add", lambda a, b: a + b, [(3, 4), (4,)], False),
        ("sub", lambda a, b: a - b, [(3, 4), (3, 1)], False),
        ("mul", lambda a, b: a * b, [(3, 4), (3, 4)], False),
        ("div", lambda a, b: a / b, [(3, 4), (3, 4)], True),
        ("power", lambda a: a ** 1.7, [(3, 4)], True),
        ("matmul", lambda a, b: a @ b, [(2, 3, 4), (4, 5)], False),
        ("matmul_batched", lambda a, b: a @ b, [(2, 3, 4), (2, 4, 2)], False),
        ("exp", T.exp, [(3, 4)], False),
        ("log", T.log, [(3, 4)], True),
        ("sqrt", T.sqrt, [(3, 4)], True),
        ("sin", T.sin, [(3, 4)], False),
        ("cos", T.cos, [(3, 4)], False),
        ("tanh", T.tanh, [(3, 4)], False),
        ("erf", T.erf, [(3, 4)], False),
        ("gelu", T.gelu, [(3, 4)], False),
        ("gelu_grad", T.gelu_grad, [(3, 4)], False),
        ("softmax", lambda a: T.softmax(a, -1), [(3, 5)], False),
        ("layer_norm", lambda a, g, b: T.layer_norm(a, g, b), [(3, 6), (6,), (6,)], False),
        ("huber", lambda a: T.huber(a * 2.0, 1.0), [(3, 4)], False),
        ("getitem", lambda a: a[1:, ::2] * 1.0, [(3, 4)], False),
        ("gather", lambda a: a[np.array([0, 2, 0])] * 1.0, [(3, 4)], False),
        ("concat", lambda a, b: T.concat([a, b], -1), [(3, 2), (3, 3)], False),
        ("stack", lambda a, b: T.stack([a, b], 0), [(3, 2), (3, 2)], False),
        ("sum", lambda a: T.tsum(a, 1, keepdims=True), [(3, 4)], False),
        ("mean", lambda a: T.mean(a, 0), [(3, 4)], False),
        ("reshape", lambda a: T.reshape(a, (4, 3)), [(3, 4)], False),
        ("swapaxes", lambda a: T.swapaxes(a, 0, 1), [(3, 4)], False),
    ]


def _jet_functions():
    w = np.random.default_rng(7).standard_normal((3, 6))
    g = np.linspace(0.5, 1.5, 6)
    return [
        ("jet_mul", lambda z: z * z),
        ("jet_div", lambda z: z / (z * z + 2.0)),
        ("jet_matmul", lambda z: z @ Tensor(w)),
        ("jet_exp", lambda z: F.exp(z)),
        ("jet_sin", lambda z: F.sin(z)),
        ("jet_tanh", lambda z: F.tanh(z)),
        ("jet_gelu", lambda z: F.gelu(z @ Tensor(w))),
        ("jet_softmax", lambda z: F.softmax(z @ Tensor(w), -1)),
        ("jet_layer_norm", lambda z: F.layer_norm(z @ Tensor(w), Tensor(g), Tensor(g * 0.1))),
        ("jet_attention", lambda z: _toy_attention(z, w)),
    ]


def _toy_attention(z, w):
    h = (z @ Tensor(w)).reshape(z.shape[0], 2, 3)
    att = F.softmax(h @ h.swapaxes(-1, -2), -1)
    return (att @ h).reshape(z.shape[0], 6)


def _tiny_fieldformer(seed: int):
    from .models import EncoderConfig, FieldFormer
    from .neighbors import NeighborSet, VelocityScales

    rng = make_rng(seed, 51)
    cfg = EncoderConfig(m=5, layers=2, d_model=8, heads=2, ffn=12)
    model = FieldFormer(cfg, VelocityScales(rng.normal(0, 0.3, 3)), rng=rng)
    B = 3
    query = rng.uniform(0, 1, (B, 3))
    deltas = rng.normal(0, 0.2, (B, cfg.m, 3))
    ns = NeighborSet(deltas, rng.normal(0, 1, (B, cfg.m, 1)), np.zeros((B, cfg.m), int), np.zeros((B, cfg.m), int),
                     np.zeros((B, cfg.m, 3), int), np.zeros((B, cfg.m)), None, query)
    return model, ns, query


def check_fieldformer_params(seed: int) -> CheckResult:
    """Parameter gradient of a full forward pass against central differences on a random subset."""
    model, ns, query = _tiny_fieldformer(seed)
    rng = make_rng(seed, 52)
    w = rng.standard_normal((len(query), 1))
    loss = lambda: T.tsum(model.forward(Tensor(query), ns) * Tensor(w))
    ad = model.params.compute_grads(loss())
    worst = 0.0
    for name in model.params.names():
        t = model.params[name]
        flat = t.data.reshape(-1)
        pick = rng.choice(flat.size, size=min(3, flat.size), replace=False)
        for i in pick:
            orig = flat[i]
            flat[i] = orig + 1e-6
            with no_grad():
                fp = loss().item()
            flat[i] = orig - 1e-6
            with no_grad():
                fm = loss().item()
            flat[i] = orig
            fd = (fp - fm) / 2e-6
            worst = max(worst, abs(ad[name].reshape(-1)[i] - fd) / max(1.0, abs(fd)))
    return CheckResult("fieldformer_forward_params", worst, FIRST_ORDER_TOL)


def check_fieldformer_partials(seed: int) -> list[CheckResult]:
    model, ns, query = _tiny_fieldformer(seed)
    parts = coordinate_partials(lambda z: model.forward(z, ns), query, ("u_x", "u_y", "u_t", "u_xx", "u_yy", "u_tt"))

    def val(z):
        with no_grad():
            return model.forward(Tensor(z), ns).data

    def first(z):
        with no_grad():
            p = coordinate_partials(lambda zz: model.forward(zz, ns), z, ("u_x", "u_y", "u_t"), order=1)
        return [p[n].data for n in ("u_x", "u_y", "u_t")]

    out = []
    eps = 1e-6
    fd1 = []
    for k in range(3):
        e = np.zeros(3)
        e[k] = eps
        fd1.append((val(query + e) - val(query - e)) / (2 * eps))
    ad1 = [parts[n].data for n in ("u_x", "u_y", "u_t")]
    out.append(CheckResult("fieldformer_coord_first", max(scaled_error(a, f) for a, f in zip(ad1, fd1)),
                           FIRST_ORDER_TOL))
    eps = 1e-5
    err2 = 0.0
    for k, n in enumerate(("u_xx", "u_yy", "u_tt")):
        e = np.zeros(3)
        e[k] = eps
        fd = (first(query + e)[k] - first(query - e)[k]) / (2 * eps)
        err2 = max(err2, scaled_error(parts[n].data, fd))
    out.append(CheckResult("fieldformer_coord_second", err2, SECOND_ORDER_TOL))
    return out


def check_invariances(seed: int) -> list[CheckResult]:
    model, ns, query = _tiny_fieldformer(seed)
    rng = make_rng(seed, 53)
    base = model.predict(query, ns=ns)
    perm = rng.permutation(ns.m)
    permuted = model.predict(query, ns=ns.permuted(perm))
    shift = rng.normal(0, 3, 3)
    moved = type(ns)(ns.deltas, ns.values, ns.sensor, ns.time_index, ns.offsets, ns.dist, None, ns.query + shift)
    translated = model.predict(query + shift, ns=moved)
    return [CheckResult("permutation_invariance", float(np.max(np.abs(base - permuted))), 1e-12),
            CheckResult("translation_invariance", float(np.max(np.abs(base - translated))), 1e-12)]


def run_gradchecks(seeds: int = 5, only: str | None = None) -> list[CheckResult]:
    """Run every check for ``seeds`` random draws; the worst error per check is reported."""
    worst: dict[str, CheckResult] = {}

    def keep(r: CheckResult):
        if only and only not in r.name:
            return
        cur = worst.get(r.name)
        if cur is None or not (r.error <= cur.error):
            worst[r.name] = r

    for seed in range(seeds):
        rng = make_rng(seed, 50)
        for name, fn, shapes, pos in _primitives():
            if only and only not in name:
                continue
            keep(check_first_order(name, fn, shapes, rng, pos))
        for name, fn in _jet_functions():
            if only and only not in name:
                continue
            keep(check_second_order(name, fn, 3, rng))
        if not only or "fieldformer" in only:
            keep(check_fieldformer_params(seed))
            for r in check_fieldformer_partials(seed):
                keep(r)
        if not only or "invariance" in only:
            for r in check_invariances(seed):
                keep(r)
    return list(worst.values())



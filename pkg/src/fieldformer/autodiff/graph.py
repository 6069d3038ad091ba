"""Parameter storage, a define-by-run graph wrapper, and derivative utilities."""
from __future__ import annotations

from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import tensor as T
from .jet import Jet
from .tensor import AutodiffError, ShapeError, Tensor, UnsupportedOperation


class ParamStore:
    """Named float64 parameters, each paired with one gradient buffer of the same shape."""

    def __init__(self, params: Mapping[str, np.ndarray] | None = None):
        self._params: dict[str, Tensor] = {}
        self._grads: dict[str, np.ndarray] = {}
        for name, value in (params or {}).items():
            self.add(name, value)

    def add(self, name: str, value) -> Tensor:
        if name in self._params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._grads[name] = np.zeros(t.shape)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def items(self):
        return self._params.items()

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return self._grads

    def zero_grad(self) -> None:
        for name in self._grads:
            self._grads[name] = np.zeros(self._params[name].shape)

    def compute_grads(self, loss: Tensor) -> dict[str, np.ndarray]:
        """Gradients of ``loss`` for every parameter, without touching the buffers."""
        names = self.names()
        return dict(zip(names, T.grad(loss, [self._params[n] for n in names])))

    def accumulate(self, grads: Mapping[str, np.ndarray], scale: float = 1.0) -> None:
        for name, g in grads.items():
            self._grads[name] = self._grads[name] + scale * g

    def backward(self, loss: Tensor) -> None:
        self.accumulate(self.compute_grads(loss))

    def state(self) -> dict[str, np.ndarray]:
        return {n: t.data.copy() for n, t in self._params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        for name, value in state.items():
            t = self._params[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != t.shape:
                raise ShapeError(f"parameter {name!r} expects {t.shape}, got {value.shape}", name)
            t.data = value.copy()

    def flat(self) -> np.ndarray:
        return np.concatenate([t.data.ravel() for t in self._params.values()]) if self._params else np.zeros(0)


class Graph:
    """A differentiable computation recorded by running ``fn`` on fresh input leaves.

    ``input_shapes`` declares the expected shape of each input (``None`` skips the
    check for that input). Forward caches every node value on the tape; backward
    requires a prior forward.
    """

    def __init__(self, fn: Callable[..., Tensor], input_shapes: Sequence[tuple | None] | None = None,
                 params: ParamStore | None = None, check_finite: bool = True):
        self.fn = fn
        self.input_shapes = input_shapes
        self.params = params
        self.check_finite = check_finite
        self.inputs: list[Tensor] | None = None
        self.output: Tensor | None = None

    def forward(self, *inputs) -> np.ndarray:
        if self.input_shapes is not None:
            if len(inputs) != len(self.input_shapes):
                raise ShapeError(f"expected {len(self.input_shapes)} inputs, got {len(inputs)}", "inputs")
            for k, (x, shape) in enumerate(zip(inputs, self.input_shapes)):
                if shape is not None and np.shape(x) != tuple(shape):
                    raise ShapeError(f"input {k} has shape {np.shape(x)}, declared {tuple(shape)}", f"input{k}")
        self.inputs = [Tensor(np.array(x, dtype=np.float64), requires_grad=True, name=f"input{k}")
                       for k, x in enumerate(inputs)]
        with T.check_finite(self.check_finite):
            self.output = self.fn(*self.inputs)
        return self.output.data

    def backward(self) -> list[np.ndarray]:
        """Populate parameter gradient buffers; return gradients w.r.t. the inputs."""
        if self.output is None:
            raise AutodiffError("backward called before forward")
        if self.output.data.size != 1:
            raise ShapeError(f"backward needs a scalar output, got {self.output.shape}", self.output.id)
        wrt = list(self.inputs)
        names: list[str] = []
        if self.params is not None:
            names = self.params.names()
            wrt += [self.params[n] for n in names]
        grads = T.grad(self.output, wrt)
        if self.params is not None:
            self.params.accumulate(dict(zip(names, grads[len(self.inputs):])))
        return grads[: len(self.inputs)]


SUPPORTED_PARTIALS = ("u", "u_x", "u_y", "u_t", "u_xx", "u_yy", "u_tt")
_AXIS = {"x": 0, "y": 1, "t": 2}


def coordinate_partials(field: Callable, z, requested: Iterable[str] | None = None,
                        order: int = 2) -> dict[str, Tensor]:
    """Value and pure partial derivatives of ``field`` at coordinates ``z`` (B, 3) = (x, y, t).

    ``field`` maps a coordinate jet to an output jet of shape (B, q). All returned
    tensors stay on the tape, so parameter gradients of any function of them are
    available.
    """
    requested = list(requested or ("u", "u_t", "u_x", "u_y", "u_xx", "u_yy"))
    for name in requested:
        if name not in SUPPORTED_PARTIALS:
            raise UnsupportedOperation(f"partial {name!r} is not supported (only pure partials)")
    need_second = any(len(n) == 4 for n in requested)
    if need_second and order < 2:
        raise ValueError("second partials requested with order=1")
    axes = sorted({_AXIS[n[2]] for n in requested if n != "u"})
    if not axes:
        axes = [0]
    zj = Jet.seed(np.asarray(z, dtype=np.float64), axes, order=2 if need_second else 1)
    out = field(zj)
    result: dict[str, Tensor] = {}
    for name in requested:
        if name == "u":
            result[name] = out.val
            continue
        k = axes.index(_AXIS[name[2]])
        result[name] = out.tangent(len(name) - 2, k)
    return result


def gradcheck(f: Callable[[Tensor], Tensor], point, eps: float = 1e-5) -> float:
    """Max over coordinates of |AD - FD| / (|FD| + 1e-12) for a scalar function ``f``."""
    x0 = np.array(point, dtype=np.float64)
    leaf = Tensor(x0.copy(), requires_grad=True)
    ad = T.grad(f(leaf), [leaf])[0]
    fd = np.zeros_like(x0)
    with T.no_grad():
        flat = x0.reshape(-1)
        for i in range(flat.size):
            xp, xm = flat.copy(), flat.copy()
            xp[i] += eps
            xm[i] -= eps
            fp = f(Tensor(xp.reshape(x0.shape))).item()
            fm = f(Tensor(xm.reshape(x0.shape))).item()
            fd.reshape(-1)[i] = (fp - fm) / (2.0 * eps)
    if fd.size == 0:
        return 0.0
    return float(np.max(np.abs(ad - fd) / (np.abs(fd) + 1e-12)))


def finite_difference_grads(loss_fn: Callable[[], Tensor], params: ParamStore, eps: float = 1e-5,
                            names: Sequence[str] | None = None,
                            index: Mapping[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn()`` w.r.t. (a subset of entries of) parameters."""
    out = {}
    for name in names or params.names():
        t = params[name]
        flat = t.data.reshape(-1)
        which = np.arange(flat.size) if index is None or name not in index else np.asarray(index[name])
        g = np.zeros(len(which))
        for j, i in enumerate(which):
            orig = flat[i]
            flat[i] = orig + eps
            with T.no_grad():
                fp = loss_fn().item()
            flat[i] = orig - eps
            with T.no_grad():
                fm = loss_fn().item()
            flat[i] = orig
            g[j] = (fp - fm) / (2.0 * eps)
        out[name] = g
    return out

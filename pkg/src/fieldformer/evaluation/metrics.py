"""Point metrics, bootstrap, relative physics residuals and full-field sweeps."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..autodiff import no_grad
from ..physics import PARTIALS, PDESpec, pde_terms, residual_from_terms
from ..autodiff import Tensor, coordinate_partials
from ..neighbors import ObservationIndex, VelocityScales, build_offset_table, gather_neighbors
from ..simulators.grid import FieldSeries, GridSpec, make_rng
from ..simulators.sensors import SensorDataset


def point_metrics(pred, truth) -> tuple[float, float]:
    """(RMSE, MAE) over all points and components."""
    err = np.asarray(pred, dtype=np.float64) - np.asarray(truth, dtype=np.float64)
    if err.size == 0:
        raise ValueError("cannot compute metrics on an empty set")
    return float(np.sqrt(np.mean(err ** 2))), float(np.mean(np.abs(err)))


def rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err ** 2)))


def mae(err: np.ndarray) -> float:
    return float(np.mean(np.abs(err)))


def bootstrap(metric: Callable[[np.ndarray], float], points: np.ndarray, B: int = 1000,
              seed: int = 0) -> tuple[float, float]:
    """Mean and std of ``metric`` over ``B`` resamples (with replacement) of the leading axis."""
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    pts = np.asarray(points)
    n = len(pts)
    if n == 0:
        raise ValueError("cannot bootstrap an empty set")
    rng = make_rng(seed, 41)
    vals = np.empty(B)
    for b in range(B):
        vals[b] = metric(pts[rng.integers(0, n, size=n)])
    return float(vals.mean()), float(vals.std(ddof=1))


@dataclass
class RelativeResidual:
    rmse: float | None     # None when the denominator vanishes
    mae: float | None


def relative_from_terms(terms: dict[str, np.ndarray], kind: str) -> RelativeResidual:
    """RMS(R) / RMS(sum |terms|) and mean|R| / mean(sum |terms|); SWE stacks its three equations."""
    if kind == "swe":
        from ..physics import SWE_GROUPS
        R = np.concatenate([sum(terms[n] for n in grp) for grp in SWE_GROUPS])
        D = np.concatenate([sum(np.abs(terms[n]) for n in grp) for grp in SWE_GROUPS])
    else:
        R = sum(terms.values())
        D = sum(np.abs(v) for v in terms.values())
    den_rms = float(np.sqrt(np.mean(D ** 2)))
    den_mean = float(np.mean(D))
    r = rmse(R) / den_rms if den_rms > 0 else None
    m = mae(R) / den_mean if den_mean > 0 else None
    return RelativeResidual(r, m)


def model_terms(model: Callable, z: np.ndarray, spec: PDESpec, batch: int = 256) -> dict[str, np.ndarray]:
    """PDE summands of a model at ``z`` evaluated with coordinate jets (no parameter tape)."""
    out: dict[str, list] = {}
    with no_grad():
        for s in range(0, len(z), batch):
            zz = z[s:s + batch]
            parts = coordinate_partials(model, zz, PARTIALS[spec.kind])
            for k, v in pde_terms(parts, zz, spec).items():
                out.setdefault(k, []).append(np.broadcast_to(v.data, (len(zz),)).copy())
    return {k: np.concatenate(v) for k, v in out.items()}


def relative_physics_residual(model: Callable, points: np.ndarray, spec: PDESpec) -> RelativeResidual:
    return relative_from_terms(model_terms(model, np.asarray(points, dtype=np.float64), spec), spec.kind)


def grid_terms(fs: FieldSeries, k: np.ndarray, i: np.ndarray, j: np.ndarray, spec: PDESpec) -> dict[str, np.ndarray]:
    """PDE summands of simulator output from centered finite-difference stencils at lattice points.

    ``k`` must lie strictly inside the time range; periodic grids wrap in space, open
    grids need interior (i, j).
    """
    g = fs.grid
    v = fs.values
    if g.periodic:
        ip, im = (i + 1) % g.nx, (i - 1) % g.nx
        jp, jm = (j + 1) % g.ny, (j - 1) % g.ny
    else:
        ip, im, jp, jm = i + 1, i - 1, j + 1, j - 1
    parts = {
        "u": v[k, i, j],
        "u_t": (v[k + 1, i, j] - v[k - 1, i, j]) / (2 * g.dt),
        "u_x": (v[k, ip, j] - v[k, im, j]) / (2 * g.dx),
        "u_y": (v[k, i, jp] - v[k, i, jm]) / (2 * g.dy),
        "u_xx": (v[k, ip, j] - 2 * v[k, i, j] + v[k, im, j]) / g.dx ** 2,
        "u_yy": (v[k, i, jp] - 2 * v[k, i, j] + v[k, i, jm]) / g.dy ** 2,
    }
    z = g.coords(k, i, j)
    terms = pde_terms({n: Tensor(a) for n, a in parts.items()}, z, spec)
    return {n: np.broadcast_to(t.data, (len(k),)).copy() for n, t in terms.items()}


class OracleInterpolator:
    """Trilinear interpolation of the simulator field (periodic wrap where applicable).

    Serves as the interpolation-error baseline for full-field evaluation.
    """

    kind = "oracle"

    def __init__(self, fs: FieldSeries):
        self.fs = fs

    def predict(self, z: np.ndarray, **_) -> np.ndarray:
        g = self.fs.grid
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        fx = (z[:, 0] - g.x0) / g.dx
        fy = (z[:, 1] - g.y0) / g.dy
        ft = np.clip((z[:, 2] - g.t0) / g.dt, 0, g.nt - 1)
        if not g.periodic:
            fx = np.clip(fx, 0, g.nx - 1)
            fy = np.clip(fy, 0, g.ny - 1)
        i0, j0, k0 = np.floor(fx).astype(int), np.floor(fy).astype(int), np.floor(ft).astype(int)
        k0 = np.minimum(k0, g.nt - 2) if g.nt > 1 else k0
        wx, wy, wt = fx - i0, fy - j0, ft - k0

        def wrap(a, n):
            return a % n if g.periodic else np.clip(a, 0, n - 1)

        out = 0.0
        for di, wi in ((0, 1 - wx), (1, wx)):
            for dj, wj in ((0, 1 - wy), (1, wy)):
                for dk, wk in ((0, 1 - wt), (1, wt)):
                    kk = np.minimum(k0 + dk, g.nt - 1)
                    val = self.fs.values[kk, wrap(i0 + di, g.nx), wrap(j0 + dj, g.ny)]
                    out = out + (wi * wj * wk)[:, None] * val
        return out


class NearestSensor:
    """Predicts the nearest training observation under the velocity-scaled metric."""

    kind = "nearest"

    def __init__(self, index: ObservationIndex, scales: VelocityScales, caps=None):
        self.index = index
        self.table = build_offset_table(scales, index.grid, caps)

    def predict(self, z: np.ndarray, **_) -> np.ndarray:
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        out = []
        for s in range(0, len(z), 4096):
            ns = gather_neighbors(z[s:s + 4096], self.index, self.table, 1)
            out.append(ns.values[:, 0, :])
        return np.concatenate(out)


def strided_points(grid: GridSpec, stride_t: int = 10, stride_s: int = 1) -> tuple[np.ndarray, ...]:
    ks = np.arange(0, grid.nt, stride_t)
    K, I, J = np.meshgrid(ks, np.arange(0, grid.nx, stride_s), np.arange(0, grid.ny, stride_s), indexing="ij")
    return K.ravel(), I.ravel(), J.ravel()


def full_field_eval(predictor, fs: FieldSeries, stride_t: int = 10, stride_s: int = 1) -> tuple[float, float]:
    """RMSE and MAE of ``predictor.predict`` over the strided lattice."""
    if stride_t < 1 or stride_s < 1:
        raise ValueError("strides must be at least 1")
    k, i, j = strided_points(fs.grid, stride_t, stride_s)
    z = fs.grid.coords(k, i, j)
    pred = predictor.predict(z)
    return point_metrics(pred, fs.values[k, i, j])


def sensor_test_points(sd: SensorDataset, grid: GridSpec, max_points: int | None = None, seed: int = 0):
    """Coordinates, clean and noisy targets of held-out sensor observations."""
    s, k = np.nonzero(sd.test_mask)
    if max_points is not None and len(s) > max_points:
        pick = np.sort(make_rng(seed, 42).choice(len(s), size=max_points, replace=False))
        s, k = s[pick], k[pick]
    cells = sd.cells[s]
    return grid.coords(k, cells[:, 0], cells[:, 1]), sd.clean[s, k], sd.noisy[s, k], (s, k)


def math_or_none(x: float | None) -> float | None:
    return None if x is None or not math.isfinite(x) else x

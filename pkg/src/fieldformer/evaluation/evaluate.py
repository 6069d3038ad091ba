"""Assemble the metric suite for one method on one benchmark."""
from __future__ import annotations

import numpy as np

from ..physics import PDESpec
from ..simulators.grid import FieldSeries, make_rng
from ..simulators.sensors import SensorDataset
from .metrics import (
    OracleInterpolator,
    bootstrap,
    full_field_eval,
    grid_terms,
    mae,
    relative_from_terms,
    relative_physics_residual,
    rmse,
    sensor_test_points,
    strided_points,
)
from .report import MetricSet


def physics_points(fs: FieldSeries, n: int, seed: int, stride_t: int = 10) -> tuple[np.ndarray, ...]:
    """A fixed random subset of the strided lattice, away from the first and last frame."""
    k, i, j = strided_points(fs.grid, stride_t)
    keep = (k > 0) & (k < fs.grid.nt - 1)
    if not fs.grid.periodic:
        keep &= (i > 0) & (i < fs.grid.nx - 1) & (j > 0) & (j < fs.grid.ny - 1)
    k, i, j = k[keep], i[keep], j[keep]
    if len(k) > n:
        pick = np.sort(make_rng(seed, 43).choice(len(k), size=n, replace=False))
        k, i, j = k[pick], i[pick], j[pick]
    return k, i, j


def evaluate(method: str, predictor, sd: SensorDataset, fs: FieldSeries, pde: PDESpec | None = None,
             full_field: bool = True, B: int = 1000, seed: int = 0, stride_t: int = 10,
             physics_samples: int = 512, field_fn=None) -> MetricSet:
    """Error metrics against the clean simulator field, plus relative residuals when a PDE is given.

    ``field_fn`` is the differentiable callable used for residuals (defaults to the
    predictor itself); the oracle interpolator uses finite-difference stencils instead.
    """
    ms = MetricSet(method, fs.benchmark)
    z, clean, _, (s, k) = sensor_test_points(sd, fs.grid)
    if len(z):
        err = predictor.predict(z) - clean
        ms.values["test_rmse"], ms.stds["test_rmse"] = bootstrap(rmse, err, B, seed)
        ms.values["test_mae"], ms.stds["test_mae"] = bootstrap(mae, err, B, seed)
    if full_field:
        ms.values["full_rmse"], ms.values["full_mae"] = full_field_eval(predictor, fs, stride_t)
    if pde is None:
        return ms
    g = fs.grid
    # test residuals at held-out sensor points (interior frames only for the stencil oracle)
    inner = (k > 0) & (k < g.nt - 1)
    if not g.periodic:
        cells = sd.cells[s]
        inner &= (cells[:, 0] > 0) & (cells[:, 0] < g.nx - 1) & (cells[:, 1] > 0) & (cells[:, 1] < g.ny - 1)
    idx = np.nonzero(inner)[0]
    if len(idx) > physics_samples:
        idx = np.sort(make_rng(seed, 44).choice(idx, size=physics_samples, replace=False))
    pk, pi, pj = physics_points(fs, physics_samples, seed, stride_t)
    if isinstance(predictor, OracleInterpolator):
        cells = sd.cells[s[idx]]
        test = relative_from_terms(grid_terms(fs, k[idx], cells[:, 0], cells[:, 1], pde), pde.kind)
        full = relative_from_terms(grid_terms(fs, pk, pi, pj, pde), pde.kind)
    elif field_fn is not None or hasattr(predictor, "params"):
        fn = field_fn or predictor
        test = relative_physics_residual(fn, z[idx], pde)
        full = relative_physics_residual(fn, g.coords(pk, pi, pj), pde)
    else:
        return ms
    ms.values["phys_rmse_test"], ms.values["phys_mae_test"] = test.rmse, test.mae
    ms.values["phys_rmse_full"], ms.values["phys_mae_full"] = full.rmse, full.mae
    return ms

"""Benchmark presets: grids, simulator dispatch and the matching PDE/boundary specs."""
from __future__ import annotations

from dataclasses import fields

import numpy as np

from .physics import BoundarySpec, PDESpec
from .simulators import (
    GridSpec,
    HeatParams,
    PollutionParams,
    SWEParams,
    WindProcess,
    heat_forcing,
    simulate_heat,
    simulate_pollution,
    simulate_swe,
)
from .simulators.pollution import draw_sources, gaussian_mixture

BENCHMARKS = ("heat", "swe", "pollution")

# Full-size presets use 64 x 64 x 10000; desk presets 32 x 32 x 2000 over the same horizon.
GRIDS = {
    "heat": {"full": dict(nx=64, ny=64, nt=10000, dt=0.001), "desk": dict(nx=32, ny=32, nt=2000, dt=0.005)},
    "swe": {"full": dict(nx=64, ny=64, nt=10000, dt=0.001), "desk": dict(nx=32, ny=32, nt=2000, dt=0.005)},
    "pollution": {"full": dict(nx=64, ny=64, nt=10000, dt=0.001, periodic=False),
                  "desk": dict(nx=32, ny=32, nt=2000, dt=0.005, periodic=False)},
}
PARAMS = {"heat": HeatParams, "swe": SWEParams, "pollution": PollutionParams}
OUTPUTS = {"heat": 1, "swe": 3, "pollution": 1}


def check_benchmark(name: str) -> str:
    if name not in BENCHMARKS:
        raise ValueError(f"unknown benchmark {name!r}; expected one of {', '.join(BENCHMARKS)}")
    return name


def default_grid(benchmark: str, desk: bool = False, **overrides) -> GridSpec:
    spec = dict(GRIDS[check_benchmark(benchmark)]["desk" if desk else "full"])
    spec.update(overrides)
    return GridSpec(**spec)


def make_params(benchmark: str, values: dict | None = None):
    cls = PARAMS[check_benchmark(benchmark)]
    values = dict(values or {})
    known = {f.name for f in fields(cls)}
    unknown = set(values) - known
    if unknown:
        raise ValueError(f"unknown {benchmark} parameters: {sorted(unknown)}")
    if benchmark == "pollution" and values.get("sources") is not None:
        values["sources"] = tuple(tuple(s) for s in values["sources"])
    return cls(**values)


def simulate(benchmark: str, grid: GridSpec, params, seed: int = 0):
    if benchmark == "heat":
        return simulate_heat(grid, params)
    if benchmark == "swe":
        return simulate_swe(grid, params)
    return simulate_pollution(grid, params, seed=seed)


def pde_spec(benchmark: str, params: dict, grid: GridSpec, value_scale: float = 1.0,
             seed: int = 0, sources=None, known_wind: bool = False) -> PDESpec | None:
    """PDE enforced during training; ``None`` for pollution unless the wind is declared known.

    Residuals are scaled to normalized coordinates: time in units of the horizon and
    values in units of ``value_scale``.
    """
    scale = max(grid.T, grid.dt) / max(value_scale, 1e-12)
    if benchmark == "heat":
        p = make_params("heat", params)
        return PDESpec("heat", alpha_x=p.alpha_x, alpha_y=p.alpha_y,
                       forcing=lambda x, y, t: heat_forcing(x, y, t, grid, p), scale=scale)
    if benchmark == "swe":
        p = make_params("swe", params)
        return PDESpec("swe", g=p.g, H=p.H, scale=scale)
    if not known_wind:
        return None
    p = make_params("pollution", params)
    wind = WindProcess(p, seed, grid.T + grid.dt)
    blobs = sources if sources is not None else draw_sources(p, seed)

    def source(x, y):
        return p.source_scale * gaussian_mixture(np.asarray(x) - grid.x0, np.asarray(y) - grid.y0, blobs)

    return PDESpec("advdiff", kappa=p.kappa, wind=wind, source=source, scale=scale)


def boundary_spec(benchmark: str, params: dict, grid: GridSpec, samples: int = 64, value_scale: float = 1.0,
                  match_derivative: bool = False, delta: float = 1.0) -> BoundarySpec:
    if benchmark in ("heat", "swe"):
        return BoundarySpec("periodic", grid, samples=samples, match_derivative=match_derivative)
    p = make_params("pollution", params)
    c_max = p.c_max if p.c_max is not None else min(grid.dx, grid.dy) / grid.dt
    return BoundarySpec("open", grid, samples=samples, rim=p.sponge_width, c_max=c_max, delta=delta,
                        scale=max(grid.T, grid.dt) / max(value_scale, 1e-12))

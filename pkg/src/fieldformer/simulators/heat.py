"""Anisotropic periodic heat equation, explicit FTCS."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .grid import CFLError, FieldSeries, GridSpec

CFL_SAFETY = 0.9


@dataclass(frozen=True)
class HeatParams:
    alpha_x: float = 0.02
    alpha_y: float = 0.005
    amplitude: float = 1.0      # forcing amplitude A
    kx: int = 1
    ky: int = 2
    period: float = 2.0          # forcing period P
    init_amplitude: float = 1.0
    init_kx: int = 2
    init_ky: int = 1

    def __post_init__(self):
        if self.alpha_x < 0 or self.alpha_y < 0:
            raise ValueError("diffusivities must be non-negative")
        if self.period <= 0:
            raise ValueError("forcing period must be positive")

    def to_dict(self):
        return asdict(self)


def heat_max_dt(grid: GridSpec, p: HeatParams) -> float:
    rate = 2.0 * p.alpha_x / grid.dx ** 2 + 2.0 * p.alpha_y / grid.dy ** 2
    return math.inf if rate == 0 else CFL_SAFETY / rate


def heat_forcing(x, y, t, grid: GridSpec, p: HeatParams):
    """f(x, y, t) = A sin(2 pi kx x / Lx) sin(2 pi ky y / Ly) cos(2 pi t / P)."""
    return (p.amplitude * np.sin(2 * np.pi * p.kx * x / grid.Lx) * np.sin(2 * np.pi * p.ky * y / grid.Ly)
            * np.cos(2 * np.pi * t / p.period))


def heat_initial(grid: GridSpec, p: HeatParams) -> np.ndarray:
    X, Y = grid.mesh()
    return p.init_amplitude * np.sin(2 * np.pi * p.init_kx * X / grid.Lx) * np.sin(2 * np.pi * p.init_ky * Y / grid.Ly)


def simulate_heat(grid: GridSpec, p: HeatParams, init: np.ndarray | None = None) -> FieldSeries:
    if not grid.periodic:
        raise ValueError("the heat benchmark uses a periodic grid")
    max_dt = heat_max_dt(grid, p)
    if grid.dt > max_dt:
        raise CFLError("heat FTCS", grid.dt, max_dt)
    u = heat_initial(grid, p) if init is None else np.array(init, dtype=np.float64)
    if u.shape != (grid.nx, grid.ny):
        raise ValueError(f"initial field has shape {u.shape}, expected {(grid.nx, grid.ny)}")
    rx = p.alpha_x * grid.dt / grid.dx ** 2
    ry = p.alpha_y * grid.dt / grid.dy ** 2
    X, Y = grid.mesh()
    shape = np.sin(2 * np.pi * p.kx * X / grid.Lx) * np.sin(2 * np.pi * p.ky * Y / grid.Ly)
    out = np.empty((grid.nt, grid.nx, grid.ny, 1))
    out[0, ..., 0] = u
    for n in range(grid.nt - 1):
        lap = (rx * (np.roll(u, 1, 0) - 2.0 * u + np.roll(u, -1, 0))
               + ry * (np.roll(u, 1, 1) - 2.0 * u + np.roll(u, -1, 1)))
        u = u + lap
        if p.amplitude != 0.0:
            t = grid.t0 + n * grid.dt
            u = u + grid.dt * p.amplitude * math.cos(2 * math.pi * t / p.period) * shape
        out[n + 1, ..., 0] = u
    return FieldSeries(out, grid, "heat", params=p.to_dict())

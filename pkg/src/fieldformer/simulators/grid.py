from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any

import numpy as np


class CFLError(ValueError):
    """Raised when a time step exceeds the scheme's stability bound."""

    def __init__(self, scheme: str, dt: float, max_dt: float):
        super().__init__(f"{scheme}: dt={dt:.6g} exceeds the admissible dt={max_dt:.6g}")
        self.scheme = scheme
        self.dt = dt
        self.max_dt = max_dt


@dataclass(frozen=True)
class GridSpec:
    """Space-time lattice in normalized units.

    Periodic grids place ``nx`` nodes on ``[x0, x0 + Lx)``; open grids place them on
    the closed interval ``[x0, x0 + Lx]``. Frame ``k`` sits at ``t0 + k * dt``.
    """

    nx: int
    ny: int
    nt: int
    dt: float
    Lx: float = 1.0
    Ly: float = 1.0
    periodic: bool = True
    x0: float = 0.0
    y0: float = 0.0
    t0: float = 0.0

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2 or self.nt < 1:
            raise ValueError(f"grid needs nx, ny >= 2 and nt >= 1, got {self.nx}, {self.ny}, {self.nt}")
        if not (self.Lx > 0 and self.Ly > 0 and self.dt > 0):
            raise ValueError("Lx, Ly and dt must be positive")

    @property
    def dx(self) -> float:
        return self.Lx / (self.nx if self.periodic else self.nx - 1)

    @property
    def dy(self) -> float:
        return self.Ly / (self.ny if self.periodic else self.ny - 1)

    @property
    def spacing(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dt])

    @property
    def T(self) -> float:
        """Time of the last frame relative to ``t0``."""
        return (self.nt - 1) * self.dt

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.nx, self.ny)

    def x(self) -> np.ndarray:
        return self.x0 + self.dx * np.arange(self.nx)

    def y(self) -> np.ndarray:
        return self.y0 + self.dy * np.arange(self.ny)

    def t(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.nt)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x(), self.y(), indexing="ij")

    def coords(self, k, i, j) -> np.ndarray:
        """Physical coordinates (x, y, t) of lattice indices; broadcasts."""
        k, i, j = np.broadcast_arrays(np.asarray(k), np.asarray(i), np.asarray(j))
        return np.stack([self.x0 + i * self.dx, self.y0 + j * self.dy, self.t0 + k * self.dt], axis=-1)

    def with_(self, **changes) -> "GridSpec":
        d = asdict(self)
        d.update(changes)
        return GridSpec(**d)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "GridSpec":
        return cls(**d)


@dataclass
class FieldSeries:
    """Dense ground-truth field of shape (nt, nx, ny, q)."""

    values: np.ndarray
    grid: GridSpec
    benchmark: str
    params: dict[str, Any] = field(default_factory=dict)
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        g = self.grid
        if self.values.ndim != 4 or self.values.shape[:3] != (g.nt, g.nx, g.ny):
            raise ValueError(f"values shape {self.values.shape} does not match grid {g.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")

    @property
    def q(self) -> int:
        return self.values.shape[-1]


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Counter-based (Philox) generator for an independent named stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))

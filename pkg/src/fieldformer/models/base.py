"""Shared plumbing for coordinate-to-field models."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..autodiff import Jet, ParamStore, Tensor, no_grad
from ..autodiff import functional as F


@dataclass
class Normalizer:
    """Affine value normalization fitted on training observations."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Normalizer":
        v = np.asarray(values, dtype=np.float64).reshape(-1, np.shape(values)[-1])
        std = v.std(axis=0)
        return cls(v.mean(axis=0), np.where(std > 0, std, 1.0))

    @classmethod
    def identity(cls, q: int) -> "Normalizer":
        return cls(np.zeros(q), np.ones(q))

    def encode(self, u: np.ndarray) -> np.ndarray:
        return (u - self.mean) / self.std

    def decode(self, out):
        return out * Tensor(self.std) + Tensor(self.mean)


@dataclass(frozen=True)
class Domain:
    """Bounding box of the space-time domain, used to normalize raw coordinates."""

    lo: tuple[float, float, float]
    hi: tuple[float, float, float]

    @classmethod
    def from_grid(cls, grid) -> "Domain":
        return cls((grid.x0, grid.y0, grid.t0),
                   (grid.x0 + grid.Lx, grid.y0 + grid.Ly, grid.t0 + max(grid.T, grid.dt)))

    def unit(self, z):
        """Map coordinates to [0, 1] per axis (works on tensors and jets)."""
        lo = np.array(self.lo)
        span = np.array(self.hi) - lo
        return (z - Tensor(lo)) * Tensor(1.0 / span)

    def to_dict(self):
        return {"lo": list(self.lo), "hi": list(self.hi)}


class FieldModel:
    """Interface: ``params`` plus ``forward(z)`` mapping (B, 3) coordinates to (B, q) values.

    ``z`` may be a tensor or a coordinate jet. ``kind`` names the architecture in checkpoints.
    """

    kind = "base"
    params: ParamStore
    norm: Normalizer

    def forward(self, z, **kw):
        raise NotImplementedError

    def __call__(self, z, **kw):
        return self.forward(z, **kw)

    def predict(self, queries: np.ndarray, batch: int = 512, **kw) -> np.ndarray:
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        out = []
        with no_grad():
            for s in range(0, len(q), batch):
                out.append(F.value(self.forward(Tensor(q[s:s + batch]), **kw)).data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.q))

    @property
    def q(self) -> int:
        return len(self.norm.mean)

    def config_dict(self) -> dict:
        raise NotImplementedError

    def buffers(self) -> dict[str, np.ndarray]:
        return {"norm_mean": self.norm.mean, "norm_std": self.norm.std}


def is_jet(x) -> bool:
    return isinstance(x, Jet)

"""Coordinate-MLP baselines: SIREN and a random-Fourier-feature MLP."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import ParamStore, Tensor
from ..autodiff import functional as F
from .base import Domain, FieldModel, Normalizer


@dataclass(frozen=True)
class SirenConfig:
    hidden: int = 64
    layers: int = 3          # hidden sine layers
    omega0: float = 30.0     # first-layer frequency scale
    omega: float = 30.0      # hidden-layer frequency scale
    q: int = 1


class Siren(FieldModel):
    """Sine-activated MLP on coordinates mapped to [-1, 1].

    Initialization follows the usual scheme: the first layer draws from
    U(-1/fan_in, 1/fan_in), later layers from U(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega).
    """

    kind = "siren"

    def __init__(self, cfg: SirenConfig, domain: Domain, norm: Normalizer | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.domain = domain
        self.norm = norm or Normalizer.identity(cfg.q)
        rng = rng or np.random.default_rng(0)
        p = ParamStore()
        fan = 3
        for i in range(cfg.layers):
            bound = 1.0 / fan if i == 0 else math.sqrt(6.0 / fan) / cfg.omega
            p.add(f"sin{i}.w", rng.uniform(-bound, bound, size=(fan, cfg.hidden)))
            p.add(f"sin{i}.b", rng.uniform(-1.0 / math.sqrt(fan), 1.0 / math.sqrt(fan), size=cfg.hidden))
            fan = cfg.hidden
        bound = math.sqrt(6.0 / fan) / cfg.omega
        p.add("out.w", rng.uniform(-bound, bound, size=(fan, cfg.q)))
        p.add("out.b", np.zeros(cfg.q))
        self.params = p

    def preactivation(self, z, layer: int = 0):
        """omega * (W h + b) of the given sine layer (layer 0 sees normalized coordinates)."""
        h = self.domain.unit(z) * 2.0 - 1.0
        for i in range(layer + 1):
            w = self.cfg.omega0 if i == 0 else self.cfg.omega
            pre = F.linear(h, self.params[f"sin{i}.w"], self.params[f"sin{i}.b"]) * w
            if i < layer:
                h = F.sin(pre)
        return pre

    def forward(self, z, **_):
        if not isinstance(z, Tensor) and not hasattr(z, "d1"):
            z = Tensor(np.asarray(z, dtype=np.float64))
        h = F.sin(self.preactivation(z, self.cfg.layers - 1))
        out = F.linear(h, self.params["out.w"], self.params["out.b"])
        return self.norm.decode(out)

    def config_dict(self) -> dict:
        return {**asdict(self.cfg), "domain": self.domain.to_dict()}


@dataclass(frozen=True)
class FourierConfig:
    features: int = 64       # rows of the frequency matrix B
    bandwidth: float = 4.0   # std of B entries, in cycles per unit of normalized coordinate
    hidden: int = 64
    layers: int = 3
    q: int = 1
    seed: int = 0


def fourier_features(zn, B: np.ndarray):
    """[sin(2 pi B z), cos(2 pi B z)] for normalized coordinates ``zn`` (..., 3)."""
    proj = F.linear(zn, Tensor(2.0 * np.pi * B.T))
    return F.concat([F.sin(proj), F.cos(proj)], axis=-1)


class FourierMLP(FieldModel):
    """GELU MLP on a fixed random Fourier encoding of [0, 1]-normalized coordinates.

    GELU rather than ReLU keeps second derivatives nonzero for PDE residuals.
    """

    kind = "fourier"

    def __init__(self, cfg: FourierConfig, domain: Domain, norm: Normalizer | None = None,
                 rng: np.random.Generator | None = None, B: np.ndarray | None = None):
        self.cfg = cfg
        self.domain = domain
        self.norm = norm or Normalizer.identity(cfg.q)
        rng = rng or np.random.default_rng(0)
        self.B = B if B is not None else cfg.bandwidth * rng.standard_normal((cfg.features, 3))
        p = ParamStore()
        fan = 2 * cfg.features
        for i in range(cfg.layers):
            bound = math.sqrt(6.0 / (fan + cfg.hidden))
            p.add(f"mlp{i}.w", rng.uniform(-bound, bound, size=(fan, cfg.hidden)))
            p.add(f"mlp{i}.b", np.zeros(cfg.hidden))
            fan = cfg.hidden
        bound = math.sqrt(6.0 / (fan + cfg.q))
        p.add("out.w", rng.uniform(-bound, bound, size=(fan, cfg.q)))
        p.add("out.b", np.zeros(cfg.q))
        self.params = p

    def forward(self, z, **_):
        if not isinstance(z, Tensor) and not hasattr(z, "d1"):
            z = Tensor(np.asarray(z, dtype=np.float64))
        h = fourier_features(self.domain.unit(z), self.B)
        for i in range(self.cfg.layers):
            h = F.gelu(F.linear(h, self.params[f"mlp{i}.w"], self.params[f"mlp{i}.b"]))
        return self.norm.decode(F.linear(h, self.params["out.w"], self.params["out.b"]))

    def config_dict(self) -> dict:
        return {**asdict(self.cfg), "domain": self.domain.to_dict()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {**super().buffers(), "fourier_B": self.B}

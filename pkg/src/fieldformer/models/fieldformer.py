"""Local transformer over velocity-scaled neighborhoods.

Each query gathers ``m`` observed neighbors; every neighbor becomes a token
``[gamma * (z_j - z_q), u_j]``. Tokens run through a pre-norm encoder with no
positional encoding, are mean-pooled and mapped to the field value by an MLP head.
Neighbor membership is frozen during differentiation, so coordinate derivatives
flow only through the delta features.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..autodiff import Jet, NonFiniteError, ParamStore, Tensor
from ..autodiff import functional as F
from ..neighbors import (
    Caps,
    NeighborSet,
    ObservationIndex,
    OffsetTable,
    VelocityScales,
    build_offset_table,
    gather_neighbors,
)
from .base import FieldModel, Normalizer


@dataclass(frozen=True)
class EncoderConfig:
    m: int = 32
    layers: int = 2
    d_model: int = 64
    heads: int = 4
    ffn: int = 128
    d_s: int = 2
    q: int = 1
    zero_head: bool = False

    def __post_init__(self):
        if self.m < 1 or self.layers < 1:
            raise ValueError("m and layers must be at least 1")
        if self.d_model % self.heads:
            raise ValueError(f"d_model={self.d_model} is not divisible by heads={self.heads}")

    @property
    def token_dim(self) -> int:
        return self.d_s + 1 + self.q


class ActivationError(NonFiniteError):
    def __init__(self, layer: int):
        FloatingPointError.__init__(self, f"non-finite activation after encoder layer {layer}")
        self.layer = layer
        self.node_id = -1
        self.op = f"layer{layer}"


def encode_neighborhood(query, ns: NeighborSet, m: int | None = None) -> np.ndarray:
    """Raw neighbor matrix with rows [x_j - x_q, y_j - y_q, t_j - t_q, u_j].

    ``ns.deltas`` already holds neighbor-minus-query offsets; ``query`` is kept
    for interface symmetry and only validated.
    """
    if m is not None and ns.m != m:
        raise ValueError(f"neighbor set has {ns.m} entries, model expects {m}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape[-1] != ns.deltas.shape[-1]:
        raise ValueError("query and neighbor coordinates disagree in dimension")
    return np.concatenate([ns.deltas, ns.values], axis=-1)


def _init_linear(rng: np.random.Generator, fan_in: int, fan_out: int, scale: float = 1.0):
    bound = scale * math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)), np.zeros(fan_out)


class FieldFormer(FieldModel):
    kind = "fieldformer"

    def __init__(self, cfg: EncoderConfig, scales: VelocityScales, norm: Normalizer | None = None,
                 rng: np.random.Generator | None = None):
        self.cfg = cfg
        self.norm = norm or Normalizer.identity(cfg.q)
        rng = rng or np.random.default_rng(0)
        p = ParamStore()
        p.add("theta", scales.theta)
        d = cfg.d_model
        w, b = _init_linear(rng, cfg.token_dim, d)
        p.add("embed.w", w)
        p.add("embed.b", b)
        resid = 1.0 / math.sqrt(2 * cfg.layers)
        for i in range(cfg.layers):
            pre = f"layer{i}."
            p.add(pre + "ln1.g", np.ones(d))
            p.add(pre + "ln1.b", np.zeros(d))
            w, b = _init_linear(rng, d, 3 * d)
            p.add(pre + "qkv.w", w)
            p.add(pre + "qkv.b", b)
            w, b = _init_linear(rng, d, d, resid)
            p.add(pre + "out.w", w)
            p.add(pre + "out.b", b)
            p.add(pre + "ln2.g", np.ones(d))
            p.add(pre + "ln2.b", np.zeros(d))
            w, b = _init_linear(rng, d, cfg.ffn)
            p.add(pre + "ff1.w", w)
            p.add(pre + "ff1.b", b)
            w, b = _init_linear(rng, cfg.ffn, d, resid)
            p.add(pre + "ff2.w", w)
            p.add(pre + "ff2.b", b)
        p.add("ln_f.g", np.ones(d))
        p.add("ln_f.b", np.zeros(d))
        w, b = _init_linear(rng, d, d)
        p.add("head1.w", w)
        p.add("head1.b", b)
        w, b = _init_linear(rng, d, cfg.q)
        p.add("head2.w", np.zeros_like(w) if cfg.zero_head else w)
        p.add("head2.b", b)
        self.params = p
        self.index: ObservationIndex | None = None
        self.table: OffsetTable | None = None
        self.caps: Caps | None = None
        self.exclude_cell = False

    # -- neighbor context -----------------------------------------------------
    @property
    def scales(self) -> VelocityScales:
        return VelocityScales(self.params["theta"].data.copy())

    def attach(self, index: ObservationIndex, caps: Caps | None = None, table: OffsetTable | None = None) -> None:
        """Bind an observation index and build (or adopt) an offset table for the current scales."""
        self.index = index
        self.caps = caps or self.caps or Caps.default(index.grid)
        self.table = table if table is not None else build_offset_table(self.scales, index.grid, self.caps)

    def refresh_table(self) -> OffsetTable:
        if self.index is None:
            raise RuntimeError("no observation index attached")
        self.table = build_offset_table(self.scales, self.index.grid, self.caps)
        return self.table

    def gather(self, queries: np.ndarray, exclude_cell=None, time_limit=None) -> NeighborSet:
        if self.index is None or self.table is None:
            raise RuntimeError("attach an observation index before querying the model")
        excl = self.exclude_cell if exclude_cell is None else exclude_cell
        return gather_neighbors(queries, self.index, self.table, self.cfg.m, exclude_cell=excl,
                                time_limit=time_limit)

    # -- forward --------------------------------------------------------------
    def tokens(self, z, ns: NeighborSet):
        """Token features for queries ``z`` (B, 3) with fixed neighbor sets."""
        if ns.m != self.cfg.m:
            raise ValueError(f"neighbor set has {ns.m} entries, model expects {self.cfg.m}")
        gamma = F.exp(self.params["theta"])
        deltas = Tensor(ns.deltas)
        if ns.query is not None:
            # zero in value when z is the gather query; carries the query dependence otherwise
            ref = Tensor(np.reshape(ns.query, (-1, 3)))
            shift = -z + ref if isinstance(z, Jet) else ref - z
            deltas = shift.reshape(z.shape[0], 1, z.shape[1]) + deltas
        return deltas * gamma, Tensor(self.norm.encode(ns.values))

    def encode(self, feats, values):
        """Encoder stack; returns per-token embeddings (B, m, d_model)."""
        p = self.params
        cfg = self.cfg
        nd = cfg.d_s + 1
        h = F.linear(feats, p["embed.w"][:nd]) + F.linear(values, p["embed.w"][nd:], p["embed.b"])
        B, m = values.shape[0], values.shape[1]
        heads, dk = cfg.heads, cfg.d_model // cfg.heads
        inv = 1.0 / math.sqrt(dk)
        for i in range(cfg.layers):
            pre = f"layer{i}."
            a = F.layer_norm(h, p[pre + "ln1.g"], p[pre + "ln1.b"])
            qkv = F.linear(a, p[pre + "qkv.w"], p[pre + "qkv.b"])
            qkv = qkv.reshape(B, m, 3, heads, dk)
            qh = qkv[:, :, 0].swapaxes(1, 2)
            kh = qkv[:, :, 1].swapaxes(1, 2)
            vh = qkv[:, :, 2].swapaxes(1, 2)
            att = F.softmax((qh @ kh.swapaxes(-1, -2)) * inv, axis=-1)
            mixed = (att @ vh).swapaxes(1, 2).reshape(B, m, cfg.d_model)
            h = h + F.linear(mixed, p[pre + "out.w"], p[pre + "out.b"])
            f = F.layer_norm(h, p[pre + "ln2.g"], p[pre + "ln2.b"])
            f = F.linear(F.gelu(F.linear(f, p[pre + "ff1.w"], p[pre + "ff1.b"])), p[pre + "ff2.w"], p[pre + "ff2.b"])
            h = h + f
            if not np.all(np.isfinite(F.value(h).data)):
                raise ActivationError(i)
        return h

    def head(self, H):
        p = self.params
        pooled = F.layer_norm(H, p["ln_f.g"], p["ln_f.b"]).mean(axis=1)
        out = F.linear(F.gelu(F.linear(pooled, p["head1.w"], p["head1.b"])), p["head2.w"], p["head2.b"])
        return out

    def forward(self, z, ns: NeighborSet | None = None, exclude_cell=None, time_limit=None):
        if ns is None:
            zq = F.value(z).data if isinstance(z, (Tensor, Jet)) else np.asarray(z, dtype=np.float64)
            ns = self.gather(zq, exclude_cell, time_limit)
        if not isinstance(z, (Tensor, Jet)):
            z = Tensor(np.asarray(z, dtype=np.float64))
        feats, values = self.tokens(z, ns)
        out = self.head(self.encode(feats, values))
        return self.norm.decode(out)

    def config_dict(self) -> dict:
        return asdict(self.cfg)

"""PDE residuals, boundary penalties and gradient-norm loss balancing."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .autodiff import ShapeError, Tensor, coordinate_partials
from .autodiff import tensor as T
from .simulators.grid import GridSpec
from .simulators.pollution import sponge_ramp

C_FLOOR = 1e-6
NORM_FLOOR = 1e-12

PDE_KINDS = ("heat", "swe", "advdiff")
PARTIALS = {
    "heat": ("u", "u_t", "u_xx", "u_yy"),
    "swe": ("u", "u_t", "u_x", "u_y"),
    "advdiff": ("u", "u_t", "u_x", "u_y", "u_xx", "u_yy"),
}


@dataclass
class PDESpec:
    """Which PDE to enforce and its coefficients.

    ``forcing`` maps (x, y, t) arrays to the heat source; ``wind`` maps a time to
    (vx, vy) and ``source`` maps (x, y) to the emission field (adv-diff only).
    ``scale`` multiplies residuals before the Huber penalty so that its threshold
    applies to residuals in normalized units.
    """

    kind: str
    alpha_x: float = 0.0
    alpha_y: float = 0.0
    g: float = 1.0
    H: float = 1.0
    kappa: float = 0.0
    forcing: Callable | None = None
    wind: Callable | None = None
    source: Callable | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in PDE_KINDS:
            raise ValueError(f"unknown PDE kind {self.kind!r}; expected one of {PDE_KINDS}")
        for name in ("alpha_x", "alpha_y", "g", "H", "kappa", "scale"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.kind == "advdiff" and self.wind is None:
            raise ValueError("the adv-diff residual needs a known wind")

    @property
    def outputs(self) -> int:
        return 3 if self.kind == "swe" else 1


@dataclass
class BoundarySpec:
    kind: str                        # periodic | open
    grid: GridSpec
    samples: int = 64
    match_derivative: bool = False   # periodic: also match the normal derivative
    rim: float = 0.08                # open: sponge rim width as a fraction of the domain
    c_max: float = 1.0               # open: radiation speed clamp
    delta: float = 1.0
    scale: float = 1.0               # residual scale for the radiation penalty

    def __post_init__(self):
        if self.kind not in ("periodic", "open"):
            raise ValueError(f"unknown boundary kind {self.kind!r}")
        if not (0.0 < self.rim < 0.5):
            raise ValueError("rim width must lie in (0, 0.5)")
        if not self.c_max > 0:
            raise ValueError("c_max must be positive")


@dataclass
class LossBreakdown:
    L_data: float = 0.0
    L_phys: float = 0.0
    L_bc: float = 0.0
    total: float = 0.0
    grad_norm_data: float = 0.0
    grad_norm_phys: float = 0.0
    grad_norm_bc: float = 0.0
    lambda_pde: float = 0.0
    lambda_pde_eff: float = 0.0
    lambda_bc: float = 0.0
    extras: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        extras = d.pop("extras")
        d.update(extras)
        return d


# ---------------------------------------------------------------------------
# residuals
# ---------------------------------------------------------------------------

def _col(t: Tensor, c: int) -> Tensor:
    return t[:, c]


def pde_terms(parts: dict, z: np.ndarray, spec: PDESpec) -> dict[str, Tensor]:
    """Signed PDE summands; the residual is their sum."""
    x, y, t = z[:, 0], z[:, 1], z[:, 2]
    if spec.kind == "heat":
        terms = {"u_t": _col(parts["u_t"], 0),
                 "diff_x": -spec.alpha_x * _col(parts["u_xx"], 0),
                 "diff_y": -spec.alpha_y * _col(parts["u_yy"], 0)}
        if spec.forcing is not None:
            terms["forcing"] = Tensor(-np.asarray(spec.forcing(x, y, t), dtype=np.float64))
        return terms
    if spec.kind == "swe":
        if parts["u"].shape[-1] < 3:
            raise ShapeError(f"the SWE residual needs (eta, u, v) outputs, model gives {parts['u'].shape[-1]}", "swe")
        return {"eta_t": _col(parts["u_t"], 0), "div_x": spec.H * _col(parts["u_x"], 1),
                "div_y": spec.H * _col(parts["u_y"], 2),
                "u_t": _col(parts["u_t"], 1), "grad_x": spec.g * _col(parts["u_x"], 0),
                "v_t": _col(parts["u_t"], 2), "grad_y": spec.g * _col(parts["u_y"], 0)}
    wind = np.array([spec.wind(float(tt)) for tt in t]).reshape(-1, 2)
    terms = {"u_t": _col(parts["u_t"], 0),
             "adv_x": _col(parts["u_x"], 0) * Tensor(wind[:, 0]),
             "adv_y": _col(parts["u_y"], 0) * Tensor(wind[:, 1]),
             "diff": -spec.kappa * (_col(parts["u_xx"], 0) + _col(parts["u_yy"], 0))}
    if spec.source is not None:
        terms["source"] = Tensor(-np.asarray(spec.source(x, y), dtype=np.float64))
    return terms


SWE_GROUPS = (("eta_t", "div_x", "div_y"), ("u_t", "grad_x"), ("v_t", "grad_y"))


def residual_from_terms(terms: dict[str, Tensor], spec: PDESpec) -> Tensor:
    """Stack terms into residuals of shape (B, 1) or (B, 3) for SWE."""
    if spec.kind == "swe":
        cols = []
        for group in SWE_GROUPS:
            acc = terms[group[0]]
            for name in group[1:]:
                acc = acc + terms[name]
            cols.append(acc)
        return T.stack(cols, axis=1)
    acc = None
    for v in terms.values():
        acc = v if acc is None else acc + v
    return T.reshape(acc, (-1, 1))


def residual(model: Callable, z, spec: PDESpec, return_terms: bool = False):
    """PDE residual of ``model`` at coordinates ``z`` (B, 3) via coordinate jets."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    parts = coordinate_partials(model, z, PARTIALS[spec.kind])
    if spec.kind == "swe" and parts["u"].shape[-1] < 3:
        raise ShapeError(f"the SWE residual needs (eta, u, v) outputs, model gives {parts['u'].shape[-1]}", "swe")
    terms = pde_terms(parts, z, spec)
    r = residual_from_terms(terms, spec)
    return (r, terms) if return_terms else r


def physics_loss(residuals: Tensor, delta: float = 1.0, scale: float = 1.0) -> Tensor:
    """Mean Huber penalty over points and components."""
    if residuals.size == 0:
        raise ValueError("physics loss needs at least one collocation point")
    return T.huber(residuals * scale if scale != 1.0 else residuals, delta).mean()


def sample_collocation(grid: GridSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform points over the space-time domain."""
    u = rng.random((n, 3))
    return np.stack([grid.x0 + u[:, 0] * grid.Lx, grid.y0 + u[:, 1] * grid.Ly, grid.t0 + u[:, 2] * grid.T], axis=1)


# ---------------------------------------------------------------------------
# boundary penalties
# ---------------------------------------------------------------------------

def periodic_bc_loss(model: Callable, bc: BoundarySpec, rng: np.random.Generator | None = None,
                     points: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Mean squared mismatch between opposite faces, summed over the x and y face pairs.

    ``points`` optionally fixes (s_samples, t_samples); otherwise ``bc.samples`` pairs
    per face are drawn.
    """
    g = bc.grid
    if points is None:
        rng = rng or np.random.default_rng(0)
        s = rng.random(bc.samples)
        t = g.t0 + rng.random(bc.samples) * g.T
    else:
        s, t = (np.asarray(a, dtype=np.float64) for a in points)
    n = len(s)
    lo_x = np.stack([np.full(n, g.x0), g.y0 + s * g.Ly, t], axis=1)
    hi_x = lo_x + np.array([g.Lx, 0.0, 0.0])
    lo_y = np.stack([g.x0 + s * g.Lx, np.full(n, g.y0), t], axis=1)
    hi_y = lo_y + np.array([0.0, g.Ly, 0.0])
    pts = np.concatenate([lo_x, hi_x, lo_y, hi_y], axis=0)
    if bc.match_derivative:
        parts = coordinate_partials(model, pts, ("u", "u_x", "u_y"), order=1)
        u = parts["u"]
    else:
        u = model(Tensor(pts))
        u = u.val if hasattr(u, "d1") else u
    dx = u[n:2 * n] - u[:n]
    dy = u[3 * n:] - u[2 * n:3 * n]
    loss = (dx * dx).mean() + (dy * dy).mean()
    if bc.match_derivative:
        gx = parts["u_x"][n:2 * n] - parts["u_x"][:n]
        gy = parts["u_y"][3 * n:] - parts["u_y"][2 * n:3 * n]
        loss = loss + (gx * gx).mean() + (gy * gy).mean()
    return loss


def sample_faces(grid: GridSpec, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Points on the four faces of an open domain and their outward normal axis/sign.

    Returns (points (n, 3), normals (n, 2)) where normals[:, 0] is the axis (0 or 1)
    and normals[:, 1] the sign.
    """
    face = rng.integers(0, 4, size=n)
    s = rng.random(n)
    t = grid.t0 + rng.random(n) * grid.T
    x = np.where(face == 0, grid.x0, np.where(face == 1, grid.x0 + grid.Lx, grid.x0 + s * grid.Lx))
    y = np.where(face == 2, grid.y0, np.where(face == 3, grid.y0 + grid.Ly, grid.y0 + s * grid.Ly))
    axis = np.where(face < 2, 0, 1)
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    return np.stack([x, y, t], axis=1), np.stack([axis, sign], axis=1)


def effective_speed(u_t: np.ndarray, u_n: np.ndarray, c_max: float) -> np.ndarray:
    """Clamped phase speed estimate -u_t / u_n with |u_n| floored (a constant, no gradient)."""
    un = np.where(np.abs(u_n) < C_FLOOR, np.where(u_n < 0, -C_FLOOR, C_FLOOR), u_n)
    return np.clip(-u_t / un, 0.0, c_max)


def radiation_bc_loss(model: Callable, bc: BoundarySpec, rng: np.random.Generator | None = None,
                      points: tuple[np.ndarray, np.ndarray] | None = None, return_speed: bool = False):
    """Mean Huber(u_t + c_eff du/dn) on boundary samples."""
    if points is None:
        points = sample_faces(bc.grid, bc.samples, rng or np.random.default_rng(0))
    pts, normals = points
    parts = coordinate_partials(model, pts, ("u_t", "u_x", "u_y"), order=1)
    axis = normals[:, 0].astype(int)
    sign = Tensor(normals[:, 1:2])
    ux, uy, ut = parts["u_x"], parts["u_y"], parts["u_t"]
    pick = Tensor((axis == 0).astype(np.float64)[:, None])
    un = (ux * pick + uy * (1.0 - pick)) * sign
    c = effective_speed(ut.data, un.data, bc.c_max)
    r = ut + un * Tensor(c)
    loss = physics_loss(r, bc.delta, bc.scale)
    return (loss, c) if return_speed else loss


def sponge_weight(pts: np.ndarray, bc: BoundarySpec) -> np.ndarray:
    g = bc.grid
    x = pts[:, 0] - g.x0
    y = pts[:, 1] - g.y0
    dist = np.minimum(np.minimum(x, g.Lx - x), np.minimum(y, g.Ly - y))
    return sponge_ramp(dist, bc.rim * min(g.Lx, g.Ly))


def sample_rim(grid: GridSpec, n: int, rim: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform samples in the rim band (rejection from the full domain)."""
    out = []
    width = rim * min(grid.Lx, grid.Ly)
    have = 0
    while have < n:
        u = rng.random((4 * n, 2))
        x, y = u[:, 0] * grid.Lx, u[:, 1] * grid.Ly
        d = np.minimum(np.minimum(x, grid.Lx - x), np.minimum(y, grid.Ly - y))
        keep = d < width
        out.append(np.stack([grid.x0 + x[keep], grid.y0 + y[keep]], axis=1))
        have += int(keep.sum())
    xy = np.concatenate(out)[:n]
    t = grid.t0 + rng.random(n) * grid.T
    return np.concatenate([xy, t[:, None]], axis=1)


def sponge_loss(model: Callable, bc: BoundarySpec, rng: np.random.Generator | None = None,
                points: np.ndarray | None = None) -> Tensor:
    """Mean of w(x, y) u^2 over rim samples; w rises to 1 at the boundary."""
    if points is None:
        points = sample_rim(bc.grid, bc.samples, bc.rim, rng or np.random.default_rng(0))
    w = sponge_weight(points, bc)
    u = model(Tensor(points))
    u = u.val if hasattr(u, "d1") else u
    return (Tensor(w[:, None]) * u * u).mean()


def boundary_loss(model: Callable, bc: BoundarySpec, rng: np.random.Generator) -> Tensor:
    if bc.kind == "periodic":
        return periodic_bc_loss(model, bc, rng)
    return radiation_bc_loss(model, bc, rng) + sponge_loss(model, bc, rng)


# ---------------------------------------------------------------------------
# balancing and totals
# ---------------------------------------------------------------------------

def balance_lambda(grad_norm_data: float, grad_norm_phys: float, lambda_pde: float,
                   ceiling: float = 1e3) -> float:
    """lambda_pde * |g_data| / max(|g_phys|, 1e-12), capped at ``ceiling``."""
    if grad_norm_data < 0 or grad_norm_phys < 0:
        raise ValueError("gradient norms must be non-negative")
    return float(min(lambda_pde * grad_norm_data / max(grad_norm_phys, NORM_FLOOR), ceiling))


class NonFiniteLoss(FloatingPointError):
    def __init__(self, part: str, value: float):
        super().__init__(f"non-finite {part} loss ({value}); step aborted")
        self.part = part


def total_loss(parts: dict[str, float], lambda_pde_eff: float, lambda_bc: float,
               lambda_pde: float | None = None) -> tuple[float, LossBreakdown]:
    """L_data + lambda_pde_eff L_phys + lambda_bc L_bc with a recorded breakdown."""
    vals = {k: float(parts.get(k, 0.0)) for k in ("data", "phys", "bc")}
    for k, v in vals.items():
        if not math.isfinite(v):
            raise NonFiniteLoss(k, v)
    total = vals["data"] + lambda_pde_eff * vals["phys"] + lambda_bc * vals["bc"]
    bd = LossBreakdown(L_data=vals["data"], L_phys=vals["phys"], L_bc=vals["bc"], total=total,
                       lambda_pde=lambda_pde_eff if lambda_pde is None else lambda_pde,
                       lambda_pde_eff=lambda_pde_eff, lambda_bc=lambda_bc)
    return total, bd


# ---------------------------------------------------------------------------
# training log
# ---------------------------------------------------------------------------

LOG_FIELDS = ["step", "L_data", "L_phys", "L_bc", "total", "grad_norm_data", "grad_norm_phys", "grad_norm_bc",
              "lambda_pde", "lambda_pde_eff", "lambda_bc", "gamma_x", "gamma_y", "gamma_t", "table_len",
              "table_build_s", "refreshed", "walk_mean"]


class TrainingLog:
    """Append-only CSV, one row per step."""

    def __init__(self, path: str | Path | None, append: bool = False):
        self.path = Path(path) if path else None
        self.rows: list[dict] = []
        if self.path and not append:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with self.path.open("w", newline="") as fh:
                csv.DictWriter(fh, LOG_FIELDS).writeheader()

    def append(self, row: dict) -> None:
        row = {k: row.get(k, "") for k in LOG_FIELDS}
        self.rows.append(row)
        if self.path:
            with self.path.open("a", newline="") as fh:
                csv.DictWriter(fh, LOG_FIELDS).writerow(row)

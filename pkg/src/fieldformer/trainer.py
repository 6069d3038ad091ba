"""Training loop: data, physics and boundary terms, Adam updates, EM table refresh, checkpoints."""
from __future__ import annotations

import hashlib
import json
import math
import sys
import time
import warnings
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .archive import read_archive, write_archive
from .autodiff import AutodiffError, Tensor
from .models import FieldFormer, FieldModel, build_model, model_arrays, model_meta
from .neighbors import NeighborError, brute_force_knn, needs_refresh
from .physics import (
    BoundarySpec,
    LossBreakdown,
    NonFiniteLoss,
    PDESpec,
    TrainingLog,
    balance_lambda,
    boundary_loss,
    physics_loss,
    residual,
    sample_collocation,
    total_loss,
)
from .simulators.grid import GridSpec, make_rng
from .simulators.sensors import SensorDataset

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    theta_lr_mult: float = 1.0
    clip: float = 1.0               # global gradient-norm clip (0 disables)
    batch: int = 64                 # data queries per step
    collocation: int = 256          # physics points per step
    bc_samples: int = 64
    lambda_pde: float = 1.0
    lambda_bc: float = 1.0
    lambda_ceiling: float = 1e3
    rebalance_every: int = 50
    huber_delta: float = 1.0
    refresh_tau: float = 0.05
    refresh_every: int = 50
    audit_queries: int = 8
    forecast_frac: float = 0.25     # share of data queries restricted to past observations
    validate_every: int = 200
    validation_points: int = 512
    seed: int = 0

    def __post_init__(self):
        for name in ("steps", "batch", "collocation", "bc_samples", "rebalance_every", "refresh_every",
                     "validate_every", "validation_points"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.lr < 0 or not (0 <= self.beta1 < 1) or not (0 <= self.beta2 < 1):
            raise ValueError("learning rate must be >= 0 and decays in [0, 1)")
        if self.refresh_tau < 0:
            raise ValueError("refresh_tau must be non-negative")
        if not (0.0 <= self.forecast_frac <= 1.0):
            raise ValueError("forecast_frac must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train keys: {sorted(unknown)}")
        return cls(**d)


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


class Adam:
    """Adaptive moment estimation with bias correction."""

    def __init__(self, names, shapes, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros(s) for n, s in zip(names, shapes)}
        self.v = {n: np.zeros(s) for n, s in zip(names, shapes)}
        self.t = 0

    def step(self, params, grads: dict[str, np.ndarray], lr: float, lr_mult: dict[str, float] | None = None) -> dict:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        updates = {}
        for name, g in grads.items():
            self.m[name] = b1 * self.m[name] + (1.0 - b1) * g
            self.v[name] = b2 * self.v[name] + (1.0 - b2) * g * g
            step = lr * (lr_mult or {}).get(name, 1.0) * (self.m[name] / c1) / (np.sqrt(self.v[name] / c2) + self.eps)
            params[name].data = params[name].data - step
            updates[name] = step
        return updates


def grad_norm(grads: dict[str, np.ndarray]) -> float:
    return float(math.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    norm = grad_norm(grads)
    if max_norm > 0 and norm > max_norm:
        s = max_norm / norm
        return {k: g * s for k, g in grads.items()}, norm
    return grads, norm


def _rng_state(rng: np.random.Generator) -> dict:
    def conv(v):
        if isinstance(v, np.ndarray):
            return {"__array__": v.tolist(), "dtype": str(v.dtype)}
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    return conv(rng.bit_generator.state)


def _restore_rng(rng: np.random.Generator, state: dict) -> None:
    def conv(v):
        if isinstance(v, dict) and "__array__" in v:
            return np.array(v["__array__"], dtype=v["dtype"])
        if isinstance(v, dict):
            return {k: conv(x) for k, x in v.items()}
        return v
    rng.bit_generator.state = conv(state)


class Trainer:
    """Owns the model parameters, optimizer state and training RNG."""

    def __init__(self, model: FieldModel, sd: SensorDataset, grid: GridSpec, cfg: TrainConfig,
                 pde: PDESpec | None = None, bc: BoundarySpec | None = None,
                 log_path: str | Path | None = None, config_digest: str = "", quiet: bool = True):
        self.model = model
        self.sd = sd
        self.grid = grid
        self.cfg = cfg
        self.pde = pde
        self.bc = bc
        self.quiet = quiet
        self.config_digest = config_digest
        names = model.params.names()
        self.opt = Adam(names, [model.params[n].shape for n in names], cfg.beta1, cfg.beta2, cfg.adam_eps)
        self.rng = make_rng(cfg.seed, 31)
        self.step = 0
        self.lambda_eff = cfg.lambda_pde
        self.best_val = math.inf
        self.best_params = model.params.state()
        self.best_step = 0
        self.history: list[LossBreakdown] = []
        self.aborted = 0
        self.refreshes = 0
        self.log = TrainingLog(log_path)
        s, k = np.nonzero(sd.train_mask)
        # Validation targets are training observations withheld from the data batches; the test
        # split is never looked at during training. They stay visible as neighbors of other queries.
        n_val = min(cfg.validation_points, len(s) // 10)
        held = np.zeros(len(s), dtype=bool)
        held[make_rng(cfg.seed, 32).choice(len(s), size=n_val, replace=False)] = True
        self.obs_sensor, self.obs_time = s[~held], k[~held]
        self.val_sensor, self.val_time = s[held], k[held]
        train_times = np.nonzero(sd.train_mask.any(axis=0))[0]
        self.last_train = int(train_times.max()) if len(train_times) else 0
        self.horizon = max(1, grid.nt - 1 - self.last_train)
        self.lr_mult = {"theta": cfg.theta_lr_mult}

    # -- batches --------------------------------------------------------------
    def _coords(self, sensor: np.ndarray, k: np.ndarray) -> np.ndarray:
        cells = self.sd.cells[sensor]
        return self.grid.coords(k, cells[:, 0], cells[:, 1])

    def _data_batch(self):
        cfg = self.cfg
        pick = self.rng.integers(0, len(self.obs_sensor), size=cfg.batch)
        s, k = self.obs_sensor[pick], self.obs_time[pick]
        z = self._coords(s, k)
        y = self.sd.noisy[s, k]
        # Past-only queries mimic the held-out tail: neighbors come from at least `gap` steps earlier.
        forecast = self.rng.random(cfg.batch) < cfg.forecast_frac
        gap = self.rng.integers(1, self.horizon + 1, size=cfg.batch)
        limit = np.where(forecast, k - gap, self.grid.nt - 1)
        min_limit = self._min_limit()
        limit = np.where(limit < min_limit, self.grid.nt - 1, limit)
        # Own-cell observations are hidden unless the query is a past-only one (then half the time).
        keep_own = forecast & (self.rng.random(cfg.batch) < 0.5)
        return z, y, limit, ~keep_own

    def _min_limit(self) -> int:
        if not isinstance(self.model, FieldFormer):
            return 0
        counts = np.cumsum(self.sd.train_mask.sum(axis=0))
        return int(np.searchsorted(counts, 2 * self.model.cfg.m))

    # -- losses ---------------------------------------------------------------
    def _predict(self, z, limit=None, exclude=None):
        if isinstance(self.model, FieldFormer):
            zq = z.val.data if hasattr(z, "d1") else (z.data if isinstance(z, Tensor) else z)
            ns = self.model.gather(zq, exclude_cell=False if exclude is None else exclude, time_limit=limit)
            return self.model.forward(z if isinstance(z, Tensor) or hasattr(z, "d1") else Tensor(z), ns)
        return self.model.forward(z if isinstance(z, Tensor) or hasattr(z, "d1") else Tensor(z))

    def data_loss(self, z, y, limit, exclude) -> Tensor:
        pred = self._predict(Tensor(z), limit, exclude)
        diff = (pred - Tensor(y)) * Tensor(1.0 / self.model.norm.std)
        return (diff * diff).mean()

    def field_fn(self) -> Callable:
        return lambda zj: self._predict(zj)

    def phys_loss(self) -> Tensor:
        pts = sample_collocation(self.grid, self.cfg.collocation, self.rng)
        r = residual(self.field_fn(), pts, self.pde)
        return physics_loss(r, self.cfg.huber_delta, self.pde.scale)

    def bc_loss(self) -> Tensor:
        return boundary_loss(self.field_fn(), self.bc, self.rng)

    # -- one step -------------------------------------------------------------
    def train_step(self) -> LossBreakdown:
        cfg = self.cfg
        params = self.model.params
        use_phys = self.pde is not None and cfg.lambda_pde > 0
        use_bc = self.bc is not None and cfg.lambda_bc > 0
        z, y, limit, exclude = self._data_batch()
        try:
            Ld = self.data_loss(z, y, limit, exclude)
            gd = params.compute_grads(Ld)
            Lp, gp, Lb, gb = 0.0, None, 0.0, None
            if use_phys:
                lp = self.phys_loss()
                Lp = lp.item()
                gp = params.compute_grads(lp)
            if use_bc:
                lb = self.bc_loss()
                Lb = lb.item()
                gb = params.compute_grads(lb)
            nd = grad_norm(gd)
            npn = grad_norm(gp) if gp is not None else 0.0
            nb = grad_norm(gb) if gb is not None else 0.0
            if use_phys and self.step % cfg.rebalance_every == 0:
                self.lambda_eff = balance_lambda(nd, npn, cfg.lambda_pde, cfg.lambda_ceiling)
            lam = self.lambda_eff if use_phys else 0.0
            lam_bc = cfg.lambda_bc if use_bc else 0.0
            _, bd = total_loss({"data": Ld.item(), "phys": Lp, "bc": Lb}, lam, lam_bc, cfg.lambda_pde)
            grads = {k: v.copy() for k, v in gd.items()}
            if gp is not None:
                for k in grads:
                    grads[k] = grads[k] + lam * gp[k]
            if gb is not None:
                for k in grads:
                    grads[k] = grads[k] + lam_bc * gb[k]
            if not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise NonFiniteLoss("gradient", float("nan"))
        except (NonFiniteLoss, AutodiffError, FloatingPointError) as exc:
            self.aborted += 1
            print(f"step {self.step}: aborted ({exc})", file=sys.stderr)
            self.step += 1
            return LossBreakdown(extras={"aborted": True})
        grads, _ = clip_gradients(grads, cfg.clip)
        self.opt.step(params, grads, cfg.lr, self.lr_mult)
        bd.grad_norm_data, bd.grad_norm_phys, bd.grad_norm_bc = nd, npn, nb
        refreshed = self._maybe_refresh()
        self.step += 1
        row = bd.row()
        row["step"] = self.step
        if "theta" in params:
            gam = np.exp(params["theta"].data)
            row.update({"gamma_x": gam[0], "gamma_y": gam[1], "gamma_t": gam[2]})
        if isinstance(self.model, FieldFormer) and self.model.table is not None:
            row.update({"table_len": len(self.model.table), "table_build_s": round(self.model.table.build_seconds, 4),
                        "refreshed": int(refreshed)})
        self.log.append(row)
        self.history.append(bd)
        return bd

    def _maybe_refresh(self) -> bool:
        m = self.model
        if not isinstance(m, FieldFormer) or m.table is None:
            return False
        if (self.step + 1) % self.cfg.refresh_every:
            return False
        if not needs_refresh(m.table.scales, m.scales, self.cfg.refresh_tau):
            return False
        m.refresh_table()
        self.refreshes += 1
        self.audit()
        return True

    def audit(self) -> None:
        """Spot-check the fresh table against exhaustive search."""
        m = self.model
        n = self.cfg.audit_queries
        arng = make_rng(self.cfg.seed, 33, self.refreshes)
        pts = sample_collocation(self.grid, n, arng)
        a = m.gather(pts, exclude_cell=False)
        b = brute_force_knn(pts, m.index, m.table.scales, m.cfg.m)
        if not (np.array_equal(a.offsets, b.offsets) and np.array_equal(a.dist, b.dist)):
            raise NeighborError("post-refresh audit: table gather disagrees with brute force")

    # -- validation and fit ---------------------------------------------------
    def validate(self) -> float:
        if len(self.val_sensor) == 0:
            return math.nan
        z = self._coords(self.val_sensor, self.val_time)
        # like data queries, a FieldFormer target may not read its own cell
        pred = self.model.predict(z, exclude_cell=True) if isinstance(self.model, FieldFormer) else self.model.predict(z)
        y = self.sd.noisy[self.val_sensor, self.val_time]
        return float(np.sqrt(np.mean((pred - y) ** 2)))

    def fit(self, steps: int | None = None, checkpoint: str | Path | None = None,
            stop_at: int | None = None) -> "Trainer":
        total = self.cfg.steps if steps is None else steps
        end = total if stop_at is None else min(stop_at, total)
        t0 = time.perf_counter()
        while self.step < end:
            bd = self.train_step()
            if self.step % self.cfg.validate_every == 0 or self.step == total:
                val = self.validate()
                if not val >= self.best_val:   # without validation points the latest state wins
                    self.best_val, self.best_step = val, self.step
                    self.best_params = self.model.params.state()
                if not self.quiet:
                    print(f"step {self.step:6d}  data {bd.L_data:.4e}  phys {bd.L_phys:.4e}  bc {bd.L_bc:.4e}  "
                          f"val_rmse {val:.4e}  ({time.perf_counter() - t0:.0f}s)", flush=True)
        if checkpoint is not None:
            save_checkpoint(self, checkpoint)
        return self

    def use_best(self) -> None:
        self.model.params.load_state(self.best_params)
        if isinstance(self.model, FieldFormer) and self.model.index is not None:
            self.model.refresh_table()


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(tr: Trainer, path: str | Path) -> None:
    arrays = model_arrays(tr.model)
    for n in tr.opt.m:
        arrays["adam_m/" + n] = tr.opt.m[n]
        arrays["adam_v/" + n] = tr.opt.v[n]
    for n, v in tr.best_params.items():
        arrays["best/" + n] = v
    meta = {
        "kind": "checkpoint",
        "checkpoint_version": CHECKPOINT_VERSION,
        **model_meta(tr.model),
        "train_config": asdict(tr.cfg),
        "config_hash": tr.config_digest,
        "step": tr.step,
        "adam_t": tr.opt.t,
        "lambda_eff": tr.lambda_eff,
        "best_val": tr.best_val if math.isfinite(tr.best_val) else None,
        "best_step": tr.best_step,
        "refreshes": tr.refreshes,
        "aborted": tr.aborted,
        "rng_state": _rng_state(tr.rng),
    }
    write_archive(path, arrays, meta)


def load_checkpoint(path: str | Path, expected_hash: str | None = None) -> tuple[FieldModel, dict, dict]:
    """Return (model, meta, arrays); warns if the stored config hash differs from ``expected_hash``."""
    arrays, meta = read_archive(path)
    if meta.get("kind") != "checkpoint":
        raise ValueError(f"{path}: archive is a {meta.get('kind')!r}, not a checkpoint")
    if meta.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {meta.get('checkpoint_version')} is not supported "
                         f"(expected {CHECKPOINT_VERSION})")
    if expected_hash is not None and meta.get("config_hash") != expected_hash:
        warnings.warn(f"checkpoint config hash {meta.get('config_hash')} differs from current {expected_hash}",
                      stacklevel=2)
    return build_model(meta, arrays), meta, arrays


def resume(path: str | Path, sd: SensorDataset, grid: GridSpec, pde=None, bc=None, index=None,
           log_path=None, expected_hash: str | None = None, quiet: bool = True) -> Trainer:
    """Rebuild a trainer from a checkpoint so that continuing matches an uninterrupted run."""
    model, meta, arrays = load_checkpoint(path, expected_hash)
    cfg = TrainConfig.from_dict(meta["train_config"])
    if isinstance(model, FieldFormer) and index is not None:
        from .neighbors import VelocityScales, build_offset_table
        table = build_offset_table(VelocityScales(meta["table_theta"]), grid, model.caps)
        model.attach(index, model.caps, table)
        model.exclude_cell = False
    tr = Trainer(model, sd, grid, cfg, pde, bc, log_path=None, config_digest=meta.get("config_hash", ""), quiet=quiet)
    if log_path is not None:
        tr.log = TrainingLog(log_path, append=True)
    for n in tr.opt.m:
        tr.opt.m[n] = arrays["adam_m/" + n].copy()
        tr.opt.v[n] = arrays["adam_v/" + n].copy()
    tr.opt.t = meta["adam_t"]
    tr.step = meta["step"]
    tr.lambda_eff = meta["lambda_eff"]
    tr.best_val = math.inf if meta["best_val"] is None else meta["best_val"]
    tr.best_step = meta["best_step"]
    tr.best_params = {k[len("best/"):]: v for k, v in arrays.items() if k.startswith("best/")}
    tr.refreshes = meta["refreshes"]
    tr.aborted = meta["aborted"]
    _restore_rng(tr.rng, meta["rng_state"])
    return tr

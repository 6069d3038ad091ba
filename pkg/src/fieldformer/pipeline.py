"""Run configuration and the generate / train / evaluate / report pipeline."""
from __future__ import annotations

import copy
import os
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .benchmarks import BENCHMARKS, OUTPUTS, boundary_spec, check_benchmark, default_grid, make_params, pde_spec, simulate
from .evaluation import MetricSet, NearestSensor, OracleInterpolator, evaluate, read_metrics, write_metrics_csv, write_report
from .models import (
    Domain,
    EncoderConfig,
    FieldFormer,
    FourierConfig,
    FourierMLP,
    Normalizer,
    Siren,
    SirenConfig,
)
from .neighbors import ObservationIndex, VelocityScales
from .simulators import GridSpec, make_rng, read_dataset, sample_sensors, write_dataset
from .trainer import Trainer, TrainConfig, config_hash, load_checkpoint, resume

SEED_ENV = "FIELDFORMER_SEED"
MODEL_KINDS = ("fieldformer", "siren", "fourier")


class ConfigError(ValueError):
    """Bad configuration or arguments; the CLI maps it to exit code 2."""


def _reject_unknown(section: str, given: dict, cls) -> None:
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(given) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(unknown)}")


@dataclass
class SensorConfig:
    count: int = 20
    noise: float = 0.1          # noise std as a fraction of max |field|
    test_frac: float = 0.2      # trailing share of each sensor series held out


@dataclass
class ModelConfig:
    kind: str = "fieldformer"
    # initial scales: one cell along each axis costs 1/radius_cells, one frame costs time_weight/radius_cells
    radius_cells: float = 4.0
    time_weight: float = 0.3
    fieldformer: dict = field(default_factory=dict)
    siren: dict = field(default_factory=dict)
    fourier: dict = field(default_factory=dict)


@dataclass
class PhysicsConfig:
    match_derivative: bool = False   # periodic faces also match first normal derivatives
    known_wind: bool = False         # pollution: enforce advection-diffusion with the synthetic wind


@dataclass
class EvalConfig:
    bootstrap: int = 1000
    stride_t: int = 10
    physics_samples: int = 512
    full_field: bool = True


@dataclass
class PathConfig:
    root: str = "runs"

    def dataset(self, bench: str) -> Path:
        return Path(self.root) / bench / "dataset.ffar"

    def checkpoint(self, bench: str, model: str) -> Path:
        return Path(self.root) / bench / f"{model}.ckpt"

    def log(self, bench: str, model: str) -> Path:
        return Path(self.root) / bench / f"{model}.log.csv"

    def metrics(self, bench: str, method: str) -> Path:
        return Path(self.root) / bench / f"metrics-{method}.csv"


@dataclass
class RunConfig:
    benchmark: str = "heat"
    seed: int = 0
    desk: bool = False
    simulation: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    sensors: SensorConfig = field(default_factory=SensorConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: dict = field(default_factory=dict)
    desk_train: dict = field(default_factory=dict)
    physics: PhysicsConfig = field(default_factory=PhysicsConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)
    paths: PathConfig = field(default_factory=PathConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return config_hash(self.to_dict())

    def train_config(self, desk: bool | None = None) -> TrainConfig:
        d = dict(self.train)
        if self.desk if desk is None else desk:
            d.update(self.desk_train)
        d["seed"] = self.seed
        try:
            return TrainConfig.from_dict(d)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        raw = copy.deepcopy(raw)
        _reject_unknown("top level", raw, cls)
        nested = {"sensors": SensorConfig, "model": ModelConfig, "physics": PhysicsConfig,
                  "evaluate": EvalConfig, "paths": PathConfig}
        kw = {}
        for key, value in raw.items():
            if key in nested:
                if not isinstance(value, dict):
                    raise ConfigError(f"[{key}] must be a table")
                _reject_unknown(key, value, nested[key])
                kw[key] = nested[key](**value)
            elif key == "desk":
                # [desk] holds training overrides; a boolean turns desk scale on
                if isinstance(value, dict):
                    extra = set(value) - {"train", "enabled"}
                    if extra:
                        raise ConfigError(f"unknown key(s) in [desk]: {', '.join(sorted(extra))}")
                    kw["desk_train"] = value.get("train", {})
                    kw["desk"] = bool(value.get("enabled", False))
                else:
                    kw["desk"] = bool(value)
            else:
                kw[key] = value
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.benchmark not in BENCHMARKS:
            raise ConfigError(f"unknown benchmark {self.benchmark!r}; expected one of {', '.join(BENCHMARKS)}")
        if self.model.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.model.kind!r}; expected one of {', '.join(MODEL_KINDS)}")
        try:
            make_params(self.benchmark, self.simulation)
            for sec, cls in (("fieldformer", EncoderConfig), ("siren", SirenConfig), ("fourier", FourierConfig)):
                _reject_unknown(f"model.{sec}", getattr(self.model, sec), cls)
            TrainConfig.from_dict(self.train)
            TrainConfig.from_dict({**self.train, **self.desk_train})
            _reject_unknown("grid", self.grid, GridSpec)
        except ConfigError:
            raise
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from None
        if self.sensors.count < 1:
            raise ConfigError("sensors.count must be at least 1")
        if self.evaluate.bootstrap < 2:
            raise ConfigError("evaluate.bootstrap must be at least 2")
        if self.model.radius_cells <= 0 or self.model.time_weight <= 0:
            raise ConfigError("model.radius_cells and model.time_weight must be positive")


def load_config(path: str | Path | None = None, benchmark: str | None = None,
                env: dict | None = None) -> RunConfig:
    """Read a TOML run config (or defaults), then apply the benchmark override and the seed variable."""
    raw: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            raw = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as e:
            raise ConfigError(f"{p}: {e}") from None
    if benchmark is not None:
        raw["benchmark"] = benchmark
    env = os.environ if env is None else env
    if env.get(SEED_ENV):
        try:
            raw["seed"] = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    try:
        return RunConfig.from_dict(raw)
    except TypeError as e:
        raise ConfigError(str(e)) from None


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def generate(cfg: RunConfig, out: str | Path | None = None) -> Path:
    bench = check_benchmark(cfg.benchmark)
    grid = default_grid(bench, cfg.desk, **cfg.grid)
    params = make_params(bench, cfg.simulation)
    fs = simulate(bench, grid, params, seed=cfg.seed)
    sd = sample_sensors(fs, cfg.sensors.count, cfg.sensors.noise, cfg.sensors.test_frac, seed=cfg.seed)
    path = Path(out) if out is not None else cfg.paths.dataset(bench)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_dataset(sd, fs, path, extra={"desk": cfg.desk, "seed": cfg.seed, "config_hash": cfg.digest()})
    return path


def load_dataset(path: str | Path):
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"dataset not found: {p}")
    return read_dataset(p)


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def initial_scales(cfg: RunConfig, grid: GridSpec) -> VelocityScales:
    s = VelocityScales.cell_isotropic(grid, cfg.model.time_weight)
    return VelocityScales(s.theta - np.log(cfg.model.radius_cells))


def fresh_model(cfg: RunConfig, kind: str, sd, grid: GridSpec, index: ObservationIndex | None = None):
    q = sd.q
    norm = Normalizer.fit(sd.noisy[sd.train_mask])
    rng = make_rng(cfg.seed, 11)
    if kind == "fieldformer":
        model = FieldFormer(EncoderConfig(**{**cfg.model.fieldformer, "q": q}), initial_scales(cfg, grid), norm, rng)
        model.attach(index or ObservationIndex.from_dataset(sd, grid))
        return model
    dom = Domain.from_grid(grid)
    if kind == "siren":
        return Siren(SirenConfig(**{**cfg.model.siren, "q": q}), dom, norm, rng)
    if kind == "fourier":
        return FourierMLP(FourierConfig(**{**cfg.model.fourier, "q": q, "seed": cfg.seed}), dom, norm, rng)
    raise ConfigError(f"unknown model kind {kind!r}")


def specs(cfg: RunConfig, meta: dict, grid: GridSpec, norm_std: float, physics: bool):
    """(pde, bc) for training; both None for the no-physics ablation."""
    if not physics:
        return None, None
    bench = meta["benchmark"]
    params = meta.get("params", {})
    pde = pde_spec(bench, _sim_params(bench, params), grid, norm_std, seed=meta.get("seed", cfg.seed),
                   known_wind=cfg.physics.known_wind)
    bc = boundary_spec(bench, _sim_params(bench, params), grid, value_scale=norm_std,
                       match_derivative=cfg.physics.match_derivative)
    return pde, bc


def _sim_params(bench: str, stored: dict) -> dict:
    """Simulator parameters recorded in a dataset, minus derived entries."""
    known = {f.name for f in fields(type(make_params(bench, {})))}
    return {k: v for k, v in stored.items() if k in known}


@dataclass
class TrainResult:
    trainer: Trainer
    checkpoint: Path
    digest: str


def train(cfg: RunConfig, dataset: str | Path | None = None, kind: str | None = None, physics: bool = True,
          out: str | Path | None = None, log: str | Path | None = None, resume_from: str | Path | None = None,
          quiet: bool = False) -> TrainResult:
    kind = kind or cfg.model.kind
    if kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(MODEL_KINDS)}")
    ds_path = Path(dataset) if dataset is not None else cfg.paths.dataset(cfg.benchmark)
    sd, fs, meta = load_dataset(ds_path)
    bench, grid = meta["benchmark"], fs.grid
    tcfg = cfg.train_config(meta.get("desk", cfg.desk))
    if not physics:
        tcfg = TrainConfig.from_dict({**asdict(tcfg), "lambda_pde": 0.0, "lambda_bc": 0.0})
    digest = config_hash({"run": cfg.to_dict(), "train": asdict(tcfg), "model": kind, "physics": physics,
                          "dataset": meta.get("config_hash", "")})
    name = kind if physics else f"{kind}-nophys"
    ckpt = Path(out) if out is not None else cfg.paths.checkpoint(bench, name)
    log_path = Path(log) if log is not None else cfg.paths.log(bench, name)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    index = ObservationIndex.from_dataset(sd, grid) if kind == "fieldformer" else None
    norm_std = float(Normalizer.fit(sd.noisy[sd.train_mask]).std[0])
    pde, bc = specs(cfg, meta, grid, norm_std, physics)
    if resume_from is not None:
        rp = Path(resume_from)
        if not rp.is_file():
            raise ConfigError(f"checkpoint not found: {rp}")
        tr = resume(rp, sd, grid, pde, bc, index, log_path, expected_hash=digest, quiet=quiet)
        tr.config_digest = digest
    else:
        model = fresh_model(cfg, kind, sd, grid, index)
        tr = Trainer(model, sd, grid, tcfg, pde, bc, log_path=log_path, config_digest=digest, quiet=quiet)
    tr.fit(checkpoint=ckpt)
    return TrainResult(tr, ckpt, digest)


# ---------------------------------------------------------------------------
# evaluate / report
# ---------------------------------------------------------------------------

def load_trained(path: str | Path, sd, grid: GridSpec):
    """Model from a checkpoint with its best-validation parameters and neighbor context restored."""
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {p}")
    model, meta, arrays = load_checkpoint(p)
    best = {k[len("best/"):]: v for k, v in arrays.items() if k.startswith("best/")}
    if best:
        model.params.load_state(best)
    if isinstance(model, FieldFormer):
        model.attach(ObservationIndex.from_dataset(sd, grid), model.caps)
    return model, meta


def run_evaluate(cfg: RunConfig, dataset: str | Path | None = None, checkpoint: str | Path | None = None,
                 oracle: bool = False, nearest: bool = False, full_field: bool | None = None,
                 out: str | Path | None = None, method: str | None = None) -> tuple[MetricSet, Path]:
    ds_path = Path(dataset) if dataset is not None else cfg.paths.dataset(cfg.benchmark)
    sd, fs, meta = load_dataset(ds_path)
    bench, grid = meta["benchmark"], fs.grid
    ev = cfg.evaluate
    full = ev.full_field if full_field is None else full_field
    norm_std = float(Normalizer.fit(sd.noisy[sd.train_mask]).std[0])
    pde, _ = specs(cfg, meta, grid, norm_std, True)
    if oracle:
        predictor, name = OracleInterpolator(fs), "oracle"
    elif nearest:
        predictor, name = NearestSensor(ObservationIndex.from_dataset(sd, grid), initial_scales(cfg, grid)), "nearest"
    else:
        if checkpoint is None:
            raise ConfigError("evaluate needs --checkpoint (or --oracle / --nearest)")
        predictor, cmeta = load_trained(checkpoint, sd, grid)
        name = cmeta["model_kind"]
        if cmeta["train_config"].get("lambda_pde", 1.0) == 0 and cmeta["train_config"].get("lambda_bc", 1.0) == 0:
            name += "-nophys"
    name = method or name
    ms = evaluate(name, predictor, sd, fs, pde, full_field=full, B=ev.bootstrap, seed=cfg.seed,
                  stride_t=ev.stride_t, physics_samples=ev.physics_samples)
    path = Path(out) if out is not None else cfg.paths.metrics(bench, name)
    write_metrics_csv([ms], path)
    return ms, path


def run_report(paths, out: str | Path) -> str:
    missing = [str(p) for p in paths if not Path(p).is_file()]
    if missing:
        raise ConfigError(f"metrics file(s) not found: {', '.join(missing)}")
    return write_report(read_metrics(paths), out)


__all__ = [
    "ConfigError",
    "EvalConfig",
    "MODEL_KINDS",
    "ModelConfig",
    "OUTPUTS",
    "PathConfig",
    "PhysicsConfig",
    "RunConfig",
    "SEED_ENV",
    "SensorConfig",
    "TrainResult",
    "fresh_model",
    "generate",
    "initial_scales",
    "load_config",
    "load_dataset",
    "load_trained",
    "run_evaluate",
    "run_report",
    "specs",
    "train",
]

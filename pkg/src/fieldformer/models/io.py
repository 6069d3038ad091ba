"""Model (de)serialization into the archive container."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from ..archive import read_archive, write_archive
from ..neighbors import Caps, VelocityScales
from .base import Domain, FieldModel, Normalizer
from .baselines import FourierConfig, FourierMLP, SirenConfig, Siren
from .fieldformer import EncoderConfig, FieldFormer

PARAM_PREFIX = "param/"
BUFFER_PREFIX = "buffer/"


def model_arrays(model: FieldModel) -> dict[str, np.ndarray]:
    arrays = {PARAM_PREFIX + k: v for k, v in model.params.state().items()}
    arrays.update({BUFFER_PREFIX + k: np.asarray(v) for k, v in model.buffers().items()})
    return arrays


def model_meta(model: FieldModel) -> dict:
    meta = {"model_kind": model.kind, "model_config": model.config_dict()}
    if isinstance(model, FieldFormer):
        meta["scales_theta"] = model.params["theta"].data.tolist()
        if model.caps is not None:
            meta["caps"] = [model.caps.spatial_radius, model.caps.temporal_depth]
        if model.table is not None:
            meta["table_theta"] = model.table.theta.tolist()
    return meta


def build_model(meta: dict, arrays: dict[str, np.ndarray]) -> FieldModel:
    kind = meta["model_kind"]
    cfg = dict(meta["model_config"])
    norm = Normalizer(arrays[BUFFER_PREFIX + "norm_mean"], arrays[BUFFER_PREFIX + "norm_std"])
    if kind == "fieldformer":
        model = FieldFormer(EncoderConfig(**cfg), VelocityScales(meta["scales_theta"]), norm)
        if "caps" in meta:
            model.caps = Caps(*meta["caps"])
    elif kind == "siren":
        dom = cfg.pop("domain")
        model = Siren(SirenConfig(**cfg), Domain(tuple(dom["lo"]), tuple(dom["hi"])), norm)
    elif kind == "fourier":
        dom = cfg.pop("domain")
        model = FourierMLP(FourierConfig(**cfg), Domain(tuple(dom["lo"]), tuple(dom["hi"])), norm,
                           B=arrays[BUFFER_PREFIX + "fourier_B"])
    else:
        raise ValueError(f"unknown model kind {kind!r}")
    model.params.load_state({k[len(PARAM_PREFIX):]: v for k, v in arrays.items() if k.startswith(PARAM_PREFIX)})
    return model


def save_model(model: FieldModel, path: str | Path, extra_meta: dict | None = None) -> None:
    meta = {"kind": "model", **model_meta(model), **(extra_meta or {})}
    write_archive(path, model_arrays(model), meta)


def load_model(path: str | Path) -> tuple[FieldModel, dict]:
    arrays, meta = read_archive(path)
    if meta.get("kind") not in ("model", "checkpoint"):
        raise ValueError(f"{path}: archive is a {meta.get('kind')!r}, not a model")
    return build_model(meta, arrays), meta

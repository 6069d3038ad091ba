"""Longitudinal sensor sampling and the dataset archive round trip."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..archive import read_archive, write_archive
from .grid import FieldSeries, GridSpec, make_rng


@dataclass
class SensorDataset:
    """Fixed sensor columns with dense time series.

    ``clean`` and ``noisy`` have shape (M, nt, q); ``train_mask`` is (M, nt) with the
    trailing ``test_frac`` of every series held out.
    """

    cells: np.ndarray
    clean: np.ndarray
    noisy: np.ndarray
    noise_frac: float
    noise_std: float
    train_mask: np.ndarray
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        self.cells = np.asarray(self.cells, dtype=np.int64)
        if len({tuple(c) for c in self.cells.tolist()}) != len(self.cells):
            raise ValueError("sensor cells must be distinct")

    @property
    def M(self) -> int:
        return len(self.cells)

    @property
    def nt(self) -> int:
        return self.clean.shape[1]

    @property
    def q(self) -> int:
        return self.clean.shape[2]

    @property
    def test_mask(self) -> np.ndarray:
        return ~self.train_mask

    def observations(self, which: str = "train", noisy: bool = True):
        """Flattened observations: (sensor ids, time indices, values)."""
        mask = {"train": self.train_mask, "test": self.test_mask, "all": np.ones_like(self.train_mask)}[which]
        s, k = np.nonzero(mask)
        vals = (self.noisy if noisy else self.clean)[s, k]
        return s, k, vals


def temporal_split(M: int, nt: int, test_frac: float) -> np.ndarray:
    n_test = int(math.ceil(test_frac * nt))
    mask = np.ones((M, nt), dtype=bool)
    if n_test:
        mask[:, nt - n_test:] = False
    return mask


def sample_sensors(fs: FieldSeries, M: int = 20, noise_frac: float = 0.1, split_frac: float = 0.2,
                   seed: int = 0) -> SensorDataset:
    g = fs.grid
    if M > g.nx * g.ny:
        raise ValueError(f"cannot place {M} distinct sensors on {g.nx}x{g.ny} cells")
    if not (0.0 <= noise_frac < 1.0):
        raise ValueError("noise_frac must lie in [0, 1)")
    rng = make_rng(seed, 21)
    flat = rng.choice(g.nx * g.ny, size=M, replace=False)
    cells = np.stack(np.unravel_index(flat, (g.nx, g.ny)), axis=1)
    clean = np.ascontiguousarray(np.transpose(fs.values[:, cells[:, 0], cells[:, 1], :], (1, 0, 2)))
    scale = float(np.max(np.abs(fs.values)))
    std = noise_frac * scale
    noisy = clean + std * make_rng(seed, 22).standard_normal(clean.shape) if std > 0 else clean.copy()
    meta = {"benchmark": fs.benchmark, "params": fs.params, "seed": int(seed), "split_frac": split_frac}
    return SensorDataset(cells, clean, noisy, noise_frac, std, temporal_split(M, g.nt, split_frac), meta)


def sparsity(sd: SensorDataset, grid: GridSpec) -> float:
    return sd.M / (grid.nx * grid.ny)


# ---------------------------------------------------------------------------
# archive round trip
# ---------------------------------------------------------------------------

def _jsonable(d: dict) -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, np.ndarray):
            continue
        if isinstance(v, dict):
            v = _jsonable(v)
        out[k] = v
    return out


def write_dataset(sd: SensorDataset, fs: FieldSeries, path: str | Path, extra: dict | None = None) -> None:
    meta = {
        "kind": "dataset",
        "benchmark": fs.benchmark,
        "grid": fs.grid.to_dict(),
        "params": fs.params,
        "diagnostics": _jsonable(fs.diagnostics),
        "sensor_cells": sd.cells.tolist(),
        "noise_frac": sd.noise_frac,
        "noise_std": sd.noise_std,
        "sensor_meta": sd.meta,
        "units": "normalized domain units: lengths in domain lengths, time in simulation time units",
    }
    if extra:
        meta.update(extra)
    arrays = {
        "field": fs.values,
        "clean": sd.clean,
        "noisy": sd.noisy,
        "train_mask": sd.train_mask.astype(np.float64),
    }
    write_archive(path, arrays, meta)


def read_dataset(path: str | Path) -> tuple[SensorDataset, FieldSeries, dict]:
    arrays, meta = read_archive(path)
    if meta.get("kind") != "dataset":
        raise ValueError(f"{path}: archive is a {meta.get('kind')!r}, not a dataset")
    grid = GridSpec.from_dict(meta["grid"])
    fs = FieldSeries(arrays["field"], grid, meta["benchmark"], params=meta["params"],
                     diagnostics=meta.get("diagnostics", {}))
    sd = SensorDataset(np.array(meta["sensor_cells"], dtype=np.int64), arrays["clean"], arrays["noisy"],
                       meta["noise_frac"], meta["noise_std"], arrays["train_mask"].astype(bool),
                       meta.get("sensor_meta", {}))
    return sd, fs, meta

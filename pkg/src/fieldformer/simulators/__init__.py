from .grid import CFLError, FieldSeries, GridSpec, make_rng
from .heat import HeatParams, heat_forcing, heat_initial, heat_max_dt, simulate_heat
from .pollution import (
    PollutionParams,
    WindProcess,
    ar1_step,
    pollution_max_dt,
    simulate_pollution,
    sponge_profile,
    sponge_ramp,
    synth_wind,
)
from .sensors import SensorDataset, read_dataset, sample_sensors, sparsity, write_dataset
from .swe import SWEParams, simulate_swe, swe_energy, swe_max_dt

__all__ = [
    "CFLError",
    "FieldSeries",
    "GridSpec",
    "HeatParams",
    "PollutionParams",
    "SWEParams",
    "SensorDataset",
    "WindProcess",
    "ar1_step",
    "heat_forcing",
    "heat_initial",
    "heat_max_dt",
    "make_rng",
    "pollution_max_dt",
    "read_dataset",
    "sample_sensors",
    "simulate_heat",
    "simulate_pollution",
    "simulate_swe",
    "sparsity",
    "sponge_profile",
    "sponge_ramp",
    "swe_energy",
    "swe_max_dt",
    "synth_wind",
    "write_dataset",
]

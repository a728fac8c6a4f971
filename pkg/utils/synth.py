"""
Module: synth.py
Responsibilities:
- Deterministic synthetic valley/crest observations driven by an hourly
  two-state latent foehn chain
- A small gridded set whose cross-ridge pressure signal follows the latent state
- A ready-to-run pipeline config for the synthetic station pair
"""
import json
import os
from dataclasses import asdict, dataclass, fields

import numpy as np
import pandas as pd

from utils.errors import ConfigError, ParseError
from utils.file_handler import (
    ObservationSeries,
    StationMeta,
    frame_to_csv,
    gridded_outputs,
    make_gridded,
    observations_to_csv,
    to_json,
)
from utils.logger import get_logger

logger = get_logger(__name__)

VALLEY_ID = "synth_valley"
CREST_ID = "synth_crest"
VALLEY = StationMeta(VALLEY_ID, "valley", 47.0, 8.5, 450.0, "south")
CREST = StationMeta(CREST_ID, "crest", 46.75, 8.5, 2100.0, "south")
RIDGE = ((46.5, 6.0), (46.5, 11.0))
VALLEY_SECTOR = (135.0, 225.0)
CREST_SECTOR = (90.0, 270.0)

# 3 x 3 mesh at 2 degree spacing centered on the valley station
GRID = {"lat0": 45.0, "lon0": 6.5, "dlat": 2.0, "dlon": 2.0, "nlat": 3, "nlon": 3}
SLOT_OFFSETS = tuple(range(-50, 1, 10))


@dataclass(frozen=True)
class SynthSpec:
    seed: int = 42
    start_year: int = 2011
    years: int = 12
    p01: float = 0.02  # hourly no-foehn -> foehn
    p10: float = 0.15  # hourly foehn -> no-foehn
    start_state: int = 0
    seasonal_amplitude: float = 0.5
    diurnal_amplitude: float = 0.3
    foehn_dtheta_mean: float = 0.0
    foehn_dtheta_sd: float = 1.5
    calm_dtheta_mean: float = -8.0
    calm_dtheta_sd: float = 2.0
    foehn_rh_mean: float = 35.0
    calm_rh_mean: float = 75.0
    rh_sd: float = 12.0
    foehn_ff_mean: float = 8.0
    calm_ff_mean: float = 2.0
    missing_fraction: float = 0.005
    coupling: float = 2.0  # cross-ridge signal per unit latent state
    direct_coupling: float = 0.2
    signal_noise: float = 1.0

    def __post_init__(self):
        for name in ("p01", "p10"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"synth: {name} must lie in [0, 1], got {value}")
        if self.years < 1:
            raise ConfigError("synth: years must be positive")
        if self.start_state not in (0, 1):
            raise ConfigError("synth: start_state must be 0 or 1")
        for name in ("foehn_dtheta_sd", "calm_dtheta_sd", "rh_sd", "signal_noise"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"synth: {name} must be positive")
        if not 0.0 <= self.missing_fraction < 1.0:
            raise ConfigError("synth: missing_fraction must lie in [0, 1)")

    @property
    def stationary_rate(self):
        total = self.p01 + self.p10
        return self.p01 / total if total else float(self.start_state)


@dataclass(frozen=True)
class SynthData:
    spec: SynthSpec
    valley: ObservationSeries
    crest: ObservationSeries
    gridded: object
    truth: pd.Series  # hourly latent state, 1.0 foehn / 0.0 no foehn


def synth_spec_from_dict(doc):
    if not isinstance(doc, dict):
        raise ConfigError("synth spec must be a JSON object")
    known = {f.name for f in fields(SynthSpec)}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"synth spec has unknown keys {unknown}")
    return SynthSpec(**doc)


def load_synth_spec(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Synth spec not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: {err.msg}", line=err.lineno) from err
    return synth_spec_from_dict(doc)


def _hours(spec):
    start = pd.Timestamp(year=spec.start_year, month=1, day=1, tz="UTC")
    end = pd.Timestamp(year=spec.start_year + spec.years - 1, month=12, day=31, hour=23, tz="UTC")
    return pd.date_range(start, end, freq="h", name="timestamp")


def _cycles(times):
    doy = times.dayofyear.to_numpy() - 1 + times.hour.to_numpy() / 24.0
    season = np.cos(2.0 * np.pi * (doy - 15.0) / 365.25)  # peaks mid-January
    day = np.cos(2.0 * np.pi * (times.hour.to_numpy() - 14.0) / 24.0)  # peaks 14 UTC
    return season, day


def latent_chain(spec, times, rng):
    """Hourly two-state chain; the onset probability follows the seasonal and diurnal cycles."""
    season, day = _cycles(times)
    onset = spec.p01 * (1.0 + spec.seasonal_amplitude * season) * (1.0 + spec.diurnal_amplitude * day)
    onset = np.clip(onset, 0.0, 1.0)
    draws = rng.random(len(times))
    state = np.empty(len(times), dtype=np.int8)
    current = spec.start_state
    for i in range(len(times)):
        if i > 0:
            if current == 0:
                current = 1 if draws[i] < onset[i] else 0
            else:
                current = 0 if draws[i] < spec.p10 else 1
        state[i] = current
    return state


def _sector_draw(rng, sector, n):
    lo, hi = sector
    width = (hi - lo) % 360.0 or 360.0
    return (lo + width * rng.random(n)) % 360.0


def _observations(spec, hours, state, rng):
    """10-min valley and crest frames; slots H-50..H carry the state of hour H."""
    slots = pd.DatetimeIndex(
        (hours.asi8[:, None] + np.array(SLOT_OFFSETS)[None, :] * 60 * 10**9).ravel(), tz="UTC", name="timestamp"
    )
    z = np.repeat(state, len(SLOT_OFFSETS)).astype(bool)
    n = len(slots)
    season, day = _cycles(slots)

    t_crest = -2.0 + 7.0 * -season + 2.0 * day + rng.normal(0.0, 1.0, n)
    dtheta = np.where(
        z,
        rng.normal(spec.foehn_dtheta_mean, spec.foehn_dtheta_sd, n),
        rng.normal(spec.calm_dtheta_mean, spec.calm_dtheta_sd, n),
    )
    dh = CREST.altitude - VALLEY.altitude
    t_valley = t_crest + 0.01 * dh + dtheta

    rh = np.clip(rng.normal(np.where(z, spec.foehn_rh_mean, spec.calm_rh_mean), spec.rh_sd), 1.0, 100.0)
    ff = np.where(z, rng.gamma(4.0, spec.foehn_ff_mean / 4.0, n), rng.gamma(2.0, spec.calm_ff_mean / 2.0, n))
    dd_valley = np.where(z, _sector_draw(rng, VALLEY_SECTOR, n), _sector_draw(rng, (0.0, 360.0), n))
    dd_crest = np.where(z, _sector_draw(rng, CREST_SECTOR, n), _sector_draw(rng, (0.0, 360.0), n))
    ff_crest = ff * 1.5 + rng.gamma(2.0, 1.0, n)
    rh_crest = np.clip(rh + rng.normal(10.0, 10.0, n), 1.0, 100.0)

    valley = pd.DataFrame({"ff": ff, "dd": dd_valley, "t": t_valley, "rh": rh}, index=slots)
    crest = pd.DataFrame({"ff": ff_crest, "dd": dd_crest, "t": t_crest, "rh": rh_crest}, index=slots)
    for frame in (valley, crest):
        gaps = rng.random(frame.shape) < spec.missing_fraction
        frame[gaps] = np.nan
    return valley, crest


def _gridded(spec, hours, state, rng):
    """
    Fields on the 3 x 3 mesh. The latent signal is spread across the ridge
    as (center latitude - latitude), so node differences see it strongly and
    the center node only through direct_coupling.
    """
    n = len(hours)
    lats = GRID["lat0"] + GRID["dlat"] * np.arange(GRID["nlat"])
    across = (VALLEY.lat - lats)[None, :, None]  # > 0 upwind (south)
    signal = spec.coupling * (2.0 * state - 1.0) + rng.normal(0.0, spec.signal_noise, n)
    signal = signal[:, None, None]
    season, day = _cycles(hours)
    season = season[:, None, None]
    shape = (n, GRID["nlat"], GRID["nlon"])

    def noise(scale):
        return rng.normal(0.0, scale, shape)

    direct = spec.direct_coupling * signal
    fields_ = {
        "mean_sea_level_pressure": 101300.0 + 150.0 * (signal * across + direct) + noise(50.0),
        "temperature_850": 278.0 - 8.0 * season + 0.8 * (direct - signal * across) + noise(0.5),
        "temperature_700": 268.0 - 7.0 * season + 0.4 * (direct - signal * across) + noise(0.5),
        "geopotential_850": 14500.0 + 120.0 * (signal * across + direct) + noise(40.0),
        "geopotential_700": 29600.0 + 100.0 * (signal * across + direct) + noise(40.0),
        "total_precipitation": np.clip(0.3 + 0.2 * signal * np.maximum(across, 0.0) + noise(0.1), 0.0, None),
        "total_cloud_cover": np.clip(0.5 + 0.1 * signal * across + noise(0.1), 0.0, 1.0),
    }
    return make_gridded(GRID["lat0"], GRID["lon0"], GRID["dlat"], GRID["dlon"], hours, fields_)


def generate(spec):
    """
    Draws one synthetic data set; a pure function of the spec (seed included).

    Returns:
    - SynthData with 10-min valley and crest series, an hourly gridded set
      over the same years and the hourly latent truth
    """
    rng = np.random.default_rng(spec.seed)
    hours = _hours(spec)
    state = latent_chain(spec, hours, rng)
    valley, crest = _observations(spec, hours, state, rng)
    gridded = _gridded(spec, hours, state, rng)
    truth = pd.Series(state.astype(float), index=hours, name="label")
    logger.info("synthetic data generated", extra={"fields": {
        "seed": spec.seed, "hours": len(hours), "foehn_rate": float(state.mean()),
    }})
    return SynthData(
        spec=spec,
        valley=ObservationSeries(VALLEY, valley),
        crest=ObservationSeries(CREST, crest),
        gridded=gridded,
        truth=truth,
    )


def synth_config(spec):
    """Pipeline config for the synthetic pair; tuning blocks are sized for a laptop run."""
    station = lambda meta: {  # noqa: E731
        "id": meta.id, "role": meta.role, "lat": meta.lat, "lon": meta.lon,
        "altitude": meta.altitude, "foehn_type": meta.foehn_type,
    }
    valley = station(VALLEY)
    valley.update({
        "crest": CREST_ID,
        "valley_sector": {"from": VALLEY_SECTOR[0], "to": VALLEY_SECTOR[1]},
        "crest_sector": {"from": CREST_SECTOR[0], "to": CREST_SECTOR[1]},
    })
    return {
        "seed": spec.seed,
        "stations": [station(CREST), valley],
        "ridge": [list(v) for v in RIDGE],
        "learners": ["lasso", "stabsel", "gbt"],
        "variable_set": "full",
        "lasso": {"folds": 10, "n_lambda": 50},
        "stabsel": {"runs": 50, "first_k": 20},
        "gbt": {"eta": [0.1, 0.2], "max_depth": [5], "min_child_weight": [2.0], "gamma": [2.0], "folds": 5},
        "cv": {
            "start_year": spec.start_year, "end_year": spec.start_year + spec.years - 1,
            "block_years": spec.years // 6 if spec.years % 6 == 0 else 2,
        },
        "paths": {"observations": "obs/{station}.csv", "gridded": "grid"},
    }


def synth_outputs(data, directory):
    """{path: content} for config.json, spec.json, obs/, grid/ and truth.csv under directory."""
    outputs = {
        os.path.join(directory, "config.json"): to_json(synth_config(data.spec)),
        os.path.join(directory, "spec.json"): to_json(asdict(data.spec)),
        os.path.join(directory, "obs", f"{VALLEY_ID}.csv"): observations_to_csv(data.valley),
        os.path.join(directory, "obs", f"{CREST_ID}.csv"): observations_to_csv(data.crest),
        os.path.join(directory, "truth.csv"): frame_to_csv(
            pd.DataFrame({"timestamp": data.truth.index, "label": data.truth.to_numpy()})
        ),
    }
    outputs.update(gridded_outputs(data.gridded, os.path.join(directory, "grid")))
    return outputs

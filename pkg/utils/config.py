"""
Module: config.py
Responsibilities:
- Parse the JSON pipeline configuration into frozen dataclasses
- Apply defaults for omitted tuning blocks
- Resolve data paths relative to the config file
- Derive per-task seeds from the single config seed
"""
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from utils.classify import MixtureOptions, WindSector
from utils.errors import ConfigError, ParseError
from utils.file_handler import StationMeta

DEFAULT_SEED = 42
LEARNERS = ("lasso", "stabsel", "gbt")
VARIABLE_SETS = ("direct", "full")
DECOMPOSE_GRID = (1e-2, 1e-1, 1e0, 1e1, 1e2, 1e3, 1e4)


@dataclass(frozen=True)
class StationConfig:
    meta: StationMeta
    crest: str = None
    valley_sector: WindSector = None
    crest_sector: WindSector = None

    @property
    def id(self):
        return self.meta.id

    @property
    def is_valley(self):
        return self.meta.role == "valley"


@dataclass(frozen=True)
class LassoOptions:
    folds: int = 30
    n_lambda: int = 100
    lambda_ratio: float = 1e-4
    max_iter: int = 100
    tol: float = 1e-8


@dataclass(frozen=True)
class StabselOptions:
    runs: int = 200
    first_k: int = 40
    threshold: float = 0.6


@dataclass(frozen=True)
class GbtOptions:
    eta: tuple = (0.1, 0.125, 0.15, 0.2)
    max_depth: tuple = (5, 10, 20)
    min_child_weight: tuple = (2.0, 4.0, 6.0)
    gamma: tuple = (2.0, 5.0, 10.0)
    folds: int = 10
    nrounds: int = 20
    subsample: float = 0.5
    reg_lambda: float = 1.0


@dataclass(frozen=True)
class CvOptions:
    start_year: int = 2011
    end_year: int = 2022
    hours: tuple = tuple(range(24))
    min_availability: float = 0.8
    threshold: float = 0.5
    block_years: int = 2


@dataclass(frozen=True)
class DecomposeOptions:
    grid: tuple = DECOMPOSE_GRID
    lambda_trend: float = None
    lambda_seasonal: float = None


@dataclass(frozen=True)
class PathsConfig:
    observations: str = "obs/{station}.csv"
    gridded: str = "grid"
    recipes: str = None


@dataclass(frozen=True)
class PipelineConfig:
    stations: tuple
    ridge: tuple = ()
    seed: int = DEFAULT_SEED
    learners: tuple = LEARNERS
    variable_set: str = "full"
    mixture: MixtureOptions = field(default_factory=MixtureOptions)
    lasso: LassoOptions = field(default_factory=LassoOptions)
    stabsel: StabselOptions = field(default_factory=StabselOptions)
    gbt: GbtOptions = field(default_factory=GbtOptions)
    cv: CvOptions = field(default_factory=CvOptions)
    decompose: DecomposeOptions = field(default_factory=DecomposeOptions)
    paths: PathsConfig = field(default_factory=PathsConfig)
    base_dir: str = "."

    def station(self, station_id):
        for st in self.stations:
            if st.id == station_id:
                return st
        raise ConfigError(f"unknown station id {station_id!r}")

    def valley_stations(self):
        return [st for st in self.stations if st.is_valley]

    def crest_of(self, station_id):
        return self.station(self.station(station_id).crest)

    def observation_path(self, station_id):
        return os.path.join(self.base_dir, self.paths.observations.format(station=station_id))

    @property
    def gridded_path(self):
        return os.path.join(self.base_dir, self.paths.gridded)

    @property
    def recipes_path(self):
        if not self.paths.recipes:
            return None
        return os.path.join(self.base_dir, self.paths.recipes)

    def with_overrides(self, seed=None, learners=None, variable_set=None):
        """Returns a copy with CLI overrides applied (None keeps the config value)."""
        changes = {}
        if seed is not None:
            changes["seed"] = int(seed)
        if learners is not None:
            changes["learners"] = _learners(learners)
        if variable_set is not None:
            changes["variable_set"] = _variable_set(variable_set)
        return replace(self, **changes)


def derive_seed(seed, *key):
    """
    Seed for one task, a pure function of the config seed and the task key
    (e.g. station, hour, learner), independent of scheduling order.
    """
    words = [int(seed) & 0xFFFFFFFF]
    for part in key:
        digest = hashlib.sha256(str(part).encode("utf-8")).digest()
        words.append(int.from_bytes(digest[:4], "little"))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _learners(names):
    names = tuple(names)
    unknown = [n for n in names if n not in LEARNERS]
    if unknown:
        raise ConfigError(f"unknown learner name(s) {unknown}; expected one of {list(LEARNERS)}")
    if not names:
        raise ConfigError("at least one learner is required")
    return names


def _variable_set(name):
    if name not in VARIABLE_SETS:
        raise ConfigError(f"unknown variable set {name!r}; expected one of {list(VARIABLE_SETS)}")
    return name


def _sector(raw, what, station_id):
    try:
        if isinstance(raw, dict):
            return WindSector(float(raw["from"]), float(raw["to"]))
        lo, hi = raw
        return WindSector(float(lo), float(hi))
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"station {station_id}: invalid {what} {raw!r} ({err})") from err


def _block(raw, cls, name, converters=None):
    """Builds an options dataclass from a JSON object, rejecting unknown keys."""
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"'{name}' must be an object")
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"'{name}' has unknown keys {unknown}")
    values = dict(raw)
    for key, conv in (converters or {}).items():
        if key in values and values[key] is not None:
            values[key] = conv(values[key])
    try:
        return cls(**values)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"'{name}': {err}") from err


def _stations(raw_stations):
    if not isinstance(raw_stations, list) or not raw_stations:
        raise ConfigError("config needs a non-empty 'stations' list")
    stations = []
    for raw in raw_stations:
        try:
            meta = StationMeta(
                id=str(raw["id"]),
                role=raw["role"],
                lat=float(raw["lat"]),
                lon=float(raw["lon"]),
                altitude=float(raw["altitude"]),
                foehn_type=raw.get("foehn_type", "south"),
            )
        except KeyError as err:
            raise ConfigError(f"station entry lacks {err}") from err
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from err
        if meta.role == "valley":
            for key in ("crest", "valley_sector", "crest_sector"):
                if raw.get(key) is None:
                    raise ConfigError(f"valley station {meta.id}: missing '{key}'")
            stations.append(StationConfig(
                meta=meta,
                crest=str(raw["crest"]),
                valley_sector=_sector(raw["valley_sector"], "valley_sector", meta.id),
                crest_sector=_sector(raw["crest_sector"], "crest_sector", meta.id),
            ))
        else:
            stations.append(StationConfig(meta=meta))

    ids = [st.id for st in stations]
    duplicated = sorted({i for i in ids if ids.count(i) > 1})
    if duplicated:
        raise ConfigError(f"duplicate station ids {duplicated}")
    by_id = {st.id: st for st in stations}
    for st in stations:
        if not st.is_valley:
            continue
        crest = by_id.get(st.crest)
        if crest is None:
            raise ConfigError(f"valley station {st.id} references unknown crest {st.crest!r}")
        if crest.is_valley:
            raise ConfigError(f"valley station {st.id} references {st.crest!r}, which is not a crest station")
    return tuple(stations)


def _ridge(raw):
    if raw is None:
        return ()
    try:
        ridge = tuple((float(lat), float(lon)) for lat, lon in raw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"ridge must be a list of [lat, lon] pairs ({err})") from err
    if len(ridge) < 2:
        raise ConfigError("ridge needs at least 2 vertices")
    return ridge


def parse_config(doc, base_dir="."):
    """Builds a PipelineConfig from an already decoded JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a JSON object")
    seed = doc.get("seed", DEFAULT_SEED)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError(f"seed must be an integer, got {seed!r}")

    as_floats = lambda v: tuple(float(x) for x in v)  # noqa: E731
    return PipelineConfig(
        stations=_stations(doc.get("stations")),
        ridge=_ridge(doc.get("ridge")),
        seed=seed,
        learners=_learners(doc.get("learners", LEARNERS)),
        variable_set=_variable_set(doc.get("variable_set", "full")),
        mixture=_block(doc.get("mixture"), MixtureOptions, "mixture"),
        lasso=_block(doc.get("lasso"), LassoOptions, "lasso"),
        stabsel=_block(doc.get("stabsel"), StabselOptions, "stabsel"),
        gbt=_block(doc.get("gbt"), GbtOptions, "gbt", {
            "eta": as_floats, "max_depth": lambda v: tuple(int(x) for x in v),
            "min_child_weight": as_floats, "gamma": as_floats,
        }),
        cv=_block(doc.get("cv"), CvOptions, "cv", {
            "hours": lambda v: tuple(sorted(int(h) for h in v)), "block_years": int,
        }),
        decompose=_block(doc.get("decompose"), DecomposeOptions, "decompose", {"grid": as_floats}),
        paths=_block(doc.get("paths"), PathsConfig, "paths"),
        base_dir=base_dir,
    )


def load_config(path):
    """
    Loads and validates the pipeline configuration.

    Parameters:
    - path: JSON config file; data paths inside are relative to its directory

    Returns:
    - PipelineConfig with defaults applied
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Config file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise ParseError(f"{path}: {err.msg}", line=err.lineno) from err
    return parse_config(doc, base_dir=os.path.dirname(os.path.abspath(path)))


def config_to_dict(config):
    """Inverse of parse_config (paths stay relative)."""
    stations = []
    for st in config.stations:
        entry = {
            "id": st.meta.id, "role": st.meta.role, "lat": st.meta.lat, "lon": st.meta.lon,
            "altitude": st.meta.altitude, "foehn_type": st.meta.foehn_type,
        }
        if st.is_valley:
            entry["crest"] = st.crest
            entry["valley_sector"] = {"from": st.valley_sector.from_deg, "to": st.valley_sector.to_deg}
            entry["crest_sector"] = {"from": st.crest_sector.from_deg, "to": st.crest_sector.to_deg}
        stations.append(entry)

    def block(obj):
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in obj.__dict__.items()}

    return {
        "seed": config.seed,
        "stations": stations,
        "ridge": [list(v) for v in config.ridge],
        "learners": list(config.learners),
        "variable_set": config.variable_set,
        "mixture": block(config.mixture),
        "lasso": block(config.lasso),
        "stabsel": block(config.stabsel),
        "gbt": block(config.gbt),
        "cv": block(config.cv),
        "decompose": block(config.decompose),
        "paths": {k: v for k, v in block(config.paths).items() if v is not None},
    }

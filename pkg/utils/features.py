"""
Module: features.py
Responsibilities:
- Star neighbourhood around a station, oriented across the main ridge
- Bilinear interpolation of gridded fields to star nodes
- Day-of-year harmonics
- Recipe-driven assembly of the 'direct' and 'full' covariate tables
"""
import json
import math
import os
import re
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd

from utils.errors import RangeError, RecipeError
from utils.file_handler import PRESSURE_LEVELS, atomic_write, to_json
from utils.logger import get_logger

logger = get_logger(__name__)

NODES = ("C", "U", "UU", "D", "DD", "UR", "UL", "DR", "DL")
UPWIND = ("U", "UU", "UR", "UL")
DOWNWIND = ("D", "DD", "DR", "DL")
YEAR_PERIOD = 365.25
KAPPA = 0.2854
GRAVITY = 9.80665

KINDS = (
    "raw", "harmonic", "vertical_gradient", "thickness", "potential_temperature",
    "spatial_diff", "group_sum", "group_mean", "group_diff", "temporal_diff", "spatiotemporal",
)
DIRECT_KINDS = ("raw", "harmonic", "vertical_gradient", "thickness", "potential_temperature")
HARMONIC_TERMS = ("sin1", "cos1", "sin2", "cos2")
LEVEL_FIELD = re.compile(r"^(?P<base>.+)_(?P<level>\d+)$")


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NodeStar:
    """Node id -> (lat, lon) in degrees; upwind_axis is a bearing clockwise from north."""
    nodes: dict
    upwind_axis: float

    @property
    def downwind_axis(self):
        return (self.upwind_axis + 180.0) % 360.0

    def __getitem__(self, node):
        return self.nodes[node]


def bearing(origin, target):
    """Plate-carree bearing in degrees [0, 360) from origin to target, both (lat, lon)."""
    dlat = target[0] - origin[0]
    dlon = target[1] - origin[1]
    return math.degrees(math.atan2(dlon, dlat)) % 360.0


def offset(origin, bearing_deg, radius):
    rad = math.radians(bearing_deg)
    return (origin[0] + radius * math.cos(rad), origin[1] + radius * math.sin(rad))


def nearest_on_polyline(point, polyline):
    """
    Closest point of a polyline to point, in lat/lon degree space.
    Equidistant segments resolve to the first one in polyline order.
    """
    p = np.array(point, dtype=float)
    best, best_dist = None, math.inf
    for a, b in zip(polyline[:-1], polyline[1:]):
        a = np.array(a, dtype=float)
        b = np.array(b, dtype=float)
        ab = b - a
        denom = float(ab @ ab)
        t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
        q = a + t * ab
        dist = float(np.hypot(*(p - q)))
        if dist < best_dist:
            best, best_dist = q, dist
    return (float(best[0]), float(best[1])), best_dist


def build_star(station, ridge, foehn_type=None):
    """
    Places the nine star nodes around a station.

    Parameters:
    - station: StationMeta (center C)
    - ridge: polyline [(lat, lon), ...] of the main ridge, >= 2 vertices
    - foehn_type: "south" or "north"; defaults to station.foehn_type

    Returns:
    - NodeStar; U/UU lie 1/2 degrees toward the ridge, D/DD opposite,
      UR/UL/DR/DL at 2 degrees, 45 degrees off the axis
    """
    if len(ridge) < 2:
        raise ValueError("ridge needs at least 2 vertices")
    foehn_type = foehn_type or station.foehn_type
    center = (station.lat, station.lon)
    nearest, distance = nearest_on_polyline(center, ridge)
    if distance == 0.0:
        raise ValueError(f"station {station.id} lies on the ridge")

    axis = bearing(center, nearest)
    down = (axis + 180.0) % 360.0
    southward = 90.0 < axis < 270.0
    if (foehn_type == "south") != southward:
        logger.warning("upwind axis disagrees with foehn type", extra={"fields": {
            "station": station.id, "axis": axis, "foehn_type": foehn_type,
        }})

    nodes = {
        "C": center,
        "U": offset(center, axis, 1.0),
        "UU": offset(center, axis, 2.0),
        "D": offset(center, down, 1.0),
        "DD": offset(center, down, 2.0),
        "UR": offset(center, (axis - 45.0) % 360.0, 2.0),
        "UL": offset(center, (axis + 45.0) % 360.0, 2.0),
        "DR": offset(center, (down + 45.0) % 360.0, 2.0),
        "DL": offset(center, (down - 45.0) % 360.0, 2.0),
    }
    return NodeStar(nodes=nodes, upwind_axis=axis)


# ---------------------------------------------------------------------------
# Interpolation and harmonics
# ---------------------------------------------------------------------------

def _cell(axis, value, name):
    if not axis[0] <= value <= axis[-1]:
        raise RangeError(f"{name} {value} outside grid [{axis[0]}, {axis[-1]}]")
    i = int(np.searchsorted(axis, value, side="right")) - 1
    i = min(max(i, 0), len(axis) - 2)
    frac = (value - axis[i]) / (axis[i + 1] - axis[i])
    return i, frac


def bilinear(values, lats, lons, lat, lon):
    """
    Bilinear interpolation on a regular ascending grid.

    Parameters:
    - values: (lat, lon) slice or (time, lat, lon) stack
    - lats, lons: ascending grid axes
    - lat, lon: target point, inside the grid bounding box

    Returns: scalar for a 2-D slice, vector over time for a stack
    """
    values = np.asarray(values, dtype=float)
    lats = np.asarray(lats, dtype=float)
    lons = np.asarray(lons, dtype=float)
    i, ty = _cell(lats, lat, "lat")
    j, tx = _cell(lons, lon, "lon")
    v00 = values[..., i, j]
    v01 = values[..., i, j + 1]
    v10 = values[..., i + 1, j]
    v11 = values[..., i + 1, j + 1]
    out = ((1 - ty) * (1 - tx) * v00 + (1 - ty) * tx * v01
           + ty * (1 - tx) * v10 + ty * tx * v11)
    return float(out) if np.ndim(out) == 0 else out


def harmonics_from_day(d, period=YEAR_PERIOD):
    """[sin(2 pi d/P), cos(2 pi d/P), sin(4 pi d/P), cos(4 pi d/P)] per day value."""
    d = np.asarray(d, dtype=float)
    w = 2.0 * np.pi * d / period
    out = np.stack([np.sin(w), np.cos(w), np.sin(2 * w), np.cos(2 * w)], axis=-1)
    return out


def day_of_year(times):
    """Fractional day of year, 0 at Jan 1 00:00 UTC."""
    times = pd.DatetimeIndex(np.atleast_1d(times))
    within_day = (times - times.normalize()) / pd.Timedelta(days=1)
    return np.asarray(times.dayofyear - 1, dtype=float) + np.asarray(within_day, dtype=float)


def harmonics(timestamp):
    """First and second order day-of-year harmonics of one timestamp (or many)."""
    single = np.ndim(timestamp) == 0 and not isinstance(timestamp, pd.DatetimeIndex)
    out = harmonics_from_day(np.asarray(day_of_year(timestamp)))
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Recipes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureRecipe:
    name: str
    kind: str
    field: str = None
    nodes: tuple = ()
    other_nodes: tuple = ()
    levels: tuple = ()
    lag: int = 0
    term: str = None

    @property
    def is_direct(self):
        return self.kind in DIRECT_KINDS and set(self.nodes) <= {"C"}

    @property
    def lag_hours(self):
        return abs(self.lag) if self.kind in ("temporal_diff", "spatiotemporal") else 0

    def to_dict(self):
        out = asdict(self)
        for key in ("nodes", "other_nodes", "levels"):
            out[key] = list(out[key])
        return {k: v for k, v in out.items() if v not in (None, [], 0) or k in ("name", "kind")}

    @classmethod
    def from_dict(cls, raw):
        try:
            return cls(
                name=str(raw["name"]),
                kind=str(raw["kind"]),
                field=raw.get("field"),
                nodes=tuple(raw.get("nodes", ())),
                other_nodes=tuple(raw.get("other_nodes", ())),
                levels=tuple(int(v) for v in raw.get("levels", ())),
                lag=int(raw.get("lag", 0)),
                term=raw.get("term"),
            )
        except (KeyError, TypeError, ValueError) as err:
            raise RecipeError(f"invalid recipe {raw!r}: {err}") from err


def _level_field(base, level):
    return f"{base}_{level}"


def _source_names(recipe):
    """Gridded field names a recipe reads."""
    if recipe.kind == "harmonic":
        return []
    if recipe.kind in ("vertical_gradient", "thickness"):
        return [_level_field(recipe.field, lv) for lv in recipe.levels]
    return [_theta_source(recipe.field) or recipe.field]


def _theta_source(name):
    """'theta_850' is a virtual field computed from 'temperature_850'."""
    match = LEVEL_FIELD.match(name or "")
    if match and match.group("base") == "theta":
        return _level_field("temperature", match.group("level"))
    return None


def validate_recipe(recipe, field_names, star):
    if recipe.kind not in KINDS:
        raise RecipeError(f"recipe {recipe.name}: unknown kind {recipe.kind!r}")
    if recipe.kind == "harmonic":
        if recipe.term not in HARMONIC_TERMS:
            raise RecipeError(f"recipe {recipe.name}: harmonic term must be one of {HARMONIC_TERMS}")
        return
    if not recipe.field:
        raise RecipeError(f"recipe {recipe.name}: no field given")
    for name in _source_names(recipe):
        if name not in field_names:
            raise RecipeError(f"recipe {recipe.name}: gridded set has no field {name!r}")
    nodes = recipe.nodes + recipe.other_nodes
    if not recipe.nodes:
        raise RecipeError(f"recipe {recipe.name}: no nodes given")
    absent = [n for n in nodes if n not in star.nodes]
    if absent:
        raise RecipeError(f"recipe {recipe.name}: node(s) {absent} not in the star")

    expected_nodes = {
        "raw": 1, "vertical_gradient": 1, "thickness": 1, "potential_temperature": 1,
        "temporal_diff": 1, "spatial_diff": 2, "spatiotemporal": 2,
    }
    if recipe.kind in expected_nodes and len(recipe.nodes) != expected_nodes[recipe.kind]:
        raise RecipeError(f"recipe {recipe.name}: {recipe.kind} takes {expected_nodes[recipe.kind]} node(s)")
    if recipe.kind == "group_diff" and (not recipe.other_nodes or recipe.term not in ("sum", "mean")):
        raise RecipeError(f"recipe {recipe.name}: group_diff needs other_nodes and term 'sum' or 'mean'")
    if recipe.kind in ("vertical_gradient", "thickness") and len(recipe.levels) != 2:
        raise RecipeError(f"recipe {recipe.name}: {recipe.kind} needs two levels")
    if recipe.kind in ("temporal_diff", "spatiotemporal") and recipe.lag == 0:
        raise RecipeError(f"recipe {recipe.name}: temporal recipes need a non-zero lag")
    if recipe.kind == "potential_temperature" and LEVEL_FIELD.match(recipe.field) is None:
        raise RecipeError(f"recipe {recipe.name}: potential_temperature needs a pressure-level field")


class _NodeSampler:
    """Caches node time series of gridded fields."""

    def __init__(self, gridded, star):
        self.gridded = gridded
        self.star = star
        self.lats = gridded.lats
        self.lons = gridded.lons
        self._cache = {}

    def __call__(self, name, node):
        key = (name, node)
        if key not in self._cache:
            source = _theta_source(name)
            lat, lon = self.star[node]
            if source:
                level = float(LEVEL_FIELD.match(name).group("level"))
                temp = bilinear(self.gridded.field(source), self.lats, self.lons, lat, lon)
                self._cache[key] = temp * (1000.0 / level) ** KAPPA
            else:
                self._cache[key] = bilinear(self.gridded.field(name), self.lats, self.lons, lat, lon)
        return self._cache[key]


def _shift(x, lag):
    """x(t + lag) on the same axis; NaN where t + lag leaves it."""
    out = np.full_like(x, np.nan)
    if lag > 0:
        out[:-lag] = x[lag:]
    else:
        out[-lag:] = x[:lag]
    return out


def _temporal(x, lag):
    """x(t+L) - x(t) for L > 0, x(t) - x(t+L) for L < 0."""
    moved = _shift(x, lag)
    return moved - x if lag > 0 else x - moved


def _compute(recipe, sample, times):
    kind = recipe.kind
    if kind == "harmonic":
        return harmonics(times)[:, HARMONIC_TERMS.index(recipe.term)]
    if kind == "raw":
        return sample(recipe.field, recipe.nodes[0])
    if kind == "potential_temperature":
        level = LEVEL_FIELD.match(recipe.field).group("level")
        return sample(f"theta_{level}", recipe.nodes[0])
    if kind in ("vertical_gradient", "thickness"):
        a, b = (_level_field(recipe.field, lv) for lv in recipe.levels)
        diff = sample(a, recipe.nodes[0]) - sample(b, recipe.nodes[0])
        return diff / GRAVITY if kind == "thickness" else diff
    if kind in ("spatial_diff", "spatiotemporal"):
        diff = sample(recipe.field, recipe.nodes[0]) - sample(recipe.field, recipe.nodes[1])
        return _temporal(diff, recipe.lag) if kind == "spatiotemporal" else diff
    if kind == "temporal_diff":
        return _temporal(sample(recipe.field, recipe.nodes[0]), recipe.lag)
    stack = np.stack([sample(recipe.field, n) for n in recipe.nodes])
    if kind == "group_sum":
        return stack.sum(axis=0)
    if kind == "group_mean":
        return stack.mean(axis=0)
    # group_diff: aggregate over nodes minus aggregate over other_nodes
    other = np.stack([sample(recipe.field, n) for n in recipe.other_nodes])
    if recipe.term == "sum":
        return stack.sum(axis=0) - other.sum(axis=0)
    return stack.mean(axis=0) - other.mean(axis=0)


@dataclass(frozen=True)
class FeatureTable:
    """Hourly covariates indexed by timestamp; no missing values."""
    data: pd.DataFrame
    variable_set: str
    dropped_rows: int = 0
    provenance: dict = field(default_factory=dict)

    @property
    def times(self):
        return self.data.index

    @property
    def columns(self):
        return list(self.data.columns)


def select_recipes(recipes, variable_set):
    if variable_set == "direct":
        return [r for r in recipes if r.is_direct]
    if variable_set == "full":
        return list(recipes)
    raise RecipeError(f"unknown variable set {variable_set!r}")


def assemble(gridded, star, recipes, variable_set):
    """
    Computes one column per recipe at every gridded time step.

    Parameters:
    - gridded: GriddedFieldSet
    - star: NodeStar
    - recipes: FeatureRecipe list (the full list; 'direct' keeps the subset
      that reads node C only with no spatial or temporal operator)
    - variable_set: "direct" or "full"

    Returns:
    - FeatureTable; rows whose temporal lags leave the time axis are dropped
      and counted in dropped_rows
    """
    chosen = select_recipes(recipes, variable_set)
    if not chosen:
        raise RecipeError(f"no recipe belongs to the {variable_set!r} set")
    names = [r.name for r in chosen]
    duplicated = sorted({n for n in names if names.count(n) > 1})
    if duplicated:
        raise RecipeError(f"duplicate recipe names {duplicated}")
    field_names = set(gridded.names)
    for recipe in chosen:
        validate_recipe(recipe, field_names, star)

    sample = _NodeSampler(gridded, star)
    columns = {r.name: _compute(r, sample, gridded.times) for r in chosen}
    data = pd.DataFrame(columns, index=pd.DatetimeIndex(gridded.times, name="timestamp"))
    keep = data.notna().all(axis=1)
    dropped = int((~keep).sum())
    data = data[keep]
    logger.info("assembled features", extra={"fields": {
        "set": variable_set, "columns": data.shape[1], "rows": len(data), "dropped_rows": dropped,
    }})
    return FeatureTable(
        data=data,
        variable_set=variable_set,
        dropped_rows=dropped,
        provenance={r.name: r.to_dict() for r in chosen},
    )


def _pressure_fields(field_names):
    """{base: sorted levels} for fields named <base>_<level> with a known level."""
    out = {}
    for name in field_names:
        match = LEVEL_FIELD.match(name)
        if match and int(match.group("level")) in PRESSURE_LEVELS:
            out.setdefault(match.group("base"), []).append(int(match.group("level")))
    return {base: sorted(levels) for base, levels in out.items()}


SPATIAL_PAIRS = (("C", "U"), ("C", "D"), ("U", "D"), ("UU", "DD"), ("UL", "DR"), ("UR", "DL"),
                 ("UL", "UR"), ("DL", "DR"))
GROUP_SUM_FIELDS = ("total_precipitation",)
GROUP_MEAN_FIELDS = ("total_cloud_cover",)
TEMPORAL_LAGS = (-3, 3)


def default_recipes(field_names):
    """
    Default recipe list for whatever fields a gridded set offers: raws at C,
    vertical gradients and thicknesses between adjacent levels, potential
    temperatures, node-pair differences, upwind/downwind group aggregates,
    +-3 h temporal changes, spatio-temporal composites and 4 harmonics.
    """
    names = sorted(field_names)
    levels = _pressure_fields(names)
    recipes = [FeatureRecipe(f"harmonic_{t}", "harmonic", term=t) for t in HARMONIC_TERMS]
    recipes += [FeatureRecipe(f"{n}@C", "raw", field=n, nodes=("C",)) for n in names]

    for base, lvls in sorted(levels.items()):
        for lo, hi in zip(lvls[:-1], lvls[1:]):
            if base == "temperature":
                recipes.append(FeatureRecipe(f"temperature_{lo}-{hi}@C", "vertical_gradient",
                                             field=base, nodes=("C",), levels=(lo, hi)))
            if base == "geopotential":
                recipes.append(FeatureRecipe(f"thickness_{lo}-{hi}@C", "thickness",
                                             field=base, nodes=("C",), levels=(lo, hi)))
    for lv in levels.get("temperature", []):
        recipes.append(FeatureRecipe(f"theta_{lv}@C", "potential_temperature",
                                     field=f"temperature_{lv}", nodes=("C",)))

    spatial_fields = [n for n in names if n not in GROUP_SUM_FIELDS + GROUP_MEAN_FIELDS]
    spatial_fields += [f"theta_{lv}" for lv in levels.get("temperature", [])]
    for n in spatial_fields:
        for a, b in SPATIAL_PAIRS:
            recipes.append(FeatureRecipe(f"{n}@{a}-{b}", "spatial_diff", field=n, nodes=(a, b)))

    for n in names:
        if n in GROUP_SUM_FIELDS:
            agg, kind = "sum", "group_sum"
        elif n in GROUP_MEAN_FIELDS:
            agg, kind = "mean", "group_mean"
        else:
            continue
        recipes.append(FeatureRecipe(f"{n}:{agg}_upwind", kind, field=n, nodes=UPWIND))
        recipes.append(FeatureRecipe(f"{n}:{agg}_downwind", kind, field=n, nodes=DOWNWIND))
        recipes.append(FeatureRecipe(f"{n}:{agg}_diff", "group_diff", field=n, nodes=UPWIND,
                                     other_nodes=DOWNWIND, term=agg))

    for n in names:
        if n in GROUP_SUM_FIELDS + GROUP_MEAN_FIELDS:
            continue
        for lag in TEMPORAL_LAGS:
            recipes.append(FeatureRecipe(f"{n}@C:dt{lag:+d}", "temporal_diff", field=n, nodes=("C",), lag=lag))
    for n in spatial_fields:
        for a, b in (("U", "D"), ("UL", "DR")):
            for lag in TEMPORAL_LAGS:
                recipes.append(FeatureRecipe(f"{n}@{a}-{b}:dt{lag:+d}", "spatiotemporal",
                                             field=n, nodes=(a, b), lag=lag))
    return recipes


def save_recipes(recipes, path=None):
    """Recipe file content (JSON); written to path when given."""
    text = to_json({"recipes": [r.to_dict() for r in recipes]})
    if path:
        atomic_write(path, text)
    return text


def load_recipes(path):
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Recipe file not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as err:
            raise RecipeError(f"{path}: line {err.lineno}: {err.msg}") from err
    raw = doc.get("recipes") if isinstance(doc, dict) else doc
    if not isinstance(raw, list):
        raise RecipeError(f"{path}: expected a list of recipes")
    return [FeatureRecipe.from_dict(r) for r in raw]

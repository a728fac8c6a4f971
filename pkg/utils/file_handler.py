"""
Module: file_handler.py
Responsibilities:
- Domain containers for station metadata, observation series and gridded fields
- Load / write the observation CSV contract (timestamp,ff,dd,t,rh)
- Load / write the gridded-set contract (manifest.json + one .bin per field)
- CSV exports for posteriors, labels, aggregates, feature tables, reconstructions
- Atomic output (temp file + rename), collected per command in an OutputSet
"""
import io
import json
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from pandas.errors import ParserError

from utils.errors import EmptySeriesError, IntegrityError, ParseError
from utils.logger import get_logger
from utils.validator import (
    CHANNELS,
    OBSERVATION_COLUMNS,
    validate_manifest,
    validate_observation_rows,
    validate_station_coordinates,
)

logger = get_logger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M:%SZ"
SLOT = pd.Timedelta(minutes=10)
HOUR = pd.Timedelta(hours=1)
PRESSURE_LEVELS = (500, 700, 750, 800, 850, 900)


@dataclass(frozen=True)
class StationMeta:
    id: str
    role: str  # "valley" or "crest"
    lat: float
    lon: float
    altitude: float
    foehn_type: str = "south"  # "south" or "north"

    def __post_init__(self):
        if self.role not in ("valley", "crest"):
            raise ValueError(f"station {self.id}: role must be 'valley' or 'crest'")
        if self.foehn_type not in ("south", "north"):
            raise ValueError(f"station {self.id}: foehn_type must be 'south' or 'north'")
        validate_station_coordinates(self.id, self.lat, self.lon, self.altitude)


@dataclass(frozen=True)
class ObservationSeries:
    """
    Regular 10-min series for one station. `data` is indexed by UTC
    timestamps and holds float columns ff, dd, t, rh with NaN for missing.
    Treat as immutable once built.
    """
    station: StationMeta
    data: pd.DataFrame

    @property
    def index(self):
        return self.data.index

    def __len__(self):
        return len(self.data)

    def n_valid(self, channel=None):
        """Count of non-missing values for one channel, or of rows with any value."""
        if channel is not None:
            return int(self.data[channel].notna().sum())
        return int(self.data.notna().any(axis=1).sum())


@dataclass(frozen=True)
class GriddedFieldSet:
    """
    Hourly fields on a regular lat/lon mesh. Arrays are (time, lat, lon),
    read-only, and share one grid and time axis.
    """
    lat0: float
    lon0: float
    dlat: float
    dlon: float
    nlat: int
    nlon: int
    times: pd.DatetimeIndex
    fields: dict = field(default_factory=dict)

    @property
    def lats(self):
        return self.lat0 + self.dlat * np.arange(self.nlat)

    @property
    def lons(self):
        return self.lon0 + self.dlon * np.arange(self.nlon)

    @property
    def names(self):
        return sorted(self.fields)

    def field(self, name):
        if name not in self.fields:
            raise KeyError(f"gridded set has no field {name!r}")
        return self.fields[name]


def make_gridded(lat0, lon0, dlat, dlon, times, fields):
    """
    Builds a GriddedFieldSet, checking shapes and finiteness of every field.
    """
    times = pd.DatetimeIndex(times)
    times = times.tz_localize("UTC") if times.tz is None else times.tz_convert("UTC")
    if len(times) > 1:
        steps = np.diff(times.asi8)
        if not np.all(steps == HOUR.value):
            raise IntegrityError("gridded time axis must be hourly and strictly increasing")
    arrays = {}
    shape = None
    for name, values in fields.items():
        arr = np.array(values, dtype=np.float64)
        if arr.ndim != 3:
            raise IntegrityError(f"field {name}: expected (time, lat, lon) array, got {arr.shape}")
        if shape is None:
            shape = arr.shape
        if arr.shape != shape or arr.shape[0] != len(times):
            raise IntegrityError(f"field {name}: shape {arr.shape} does not match {(len(times),) + shape[1:]}")
        if not np.all(np.isfinite(arr)):
            raise IntegrityError(f"field {name}: contains missing cells (gridded data must be gap-free)")
        arr.setflags(write=False)
        arrays[name] = arr
    if shape is None:
        raise IntegrityError("gridded set needs at least one field")
    return GriddedFieldSet(
        lat0=float(lat0), lon0=float(lon0), dlat=float(dlat), dlon=float(dlon),
        nlat=int(shape[1]), nlon=int(shape[2]), times=times, fields=arrays,
    )


# ---------------------------------------------------------------------------
# Observations
# ---------------------------------------------------------------------------

def load_observations(path, station):
    """
    Reads one station's observation CSV and regularizes it to the 10-min grid.

    Parameters:
    - path: CSV with header timestamp,ff,dd,t,rh; ISO-8601 UTC timestamps;
      empty field = missing
    - station: StationMeta the file belongs to

    Returns:
    - ObservationSeries spanning min..max timestamp; absent slots are missing
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Observation file not found: {path}")

    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, skip_blank_lines=True)
    except ParserError as err:
        raise ParseError(f"{path}: {err}") from err
    except pd.errors.EmptyDataError as err:
        raise ParseError(f"{path}: empty file", line=1) from err

    header = [c.strip() for c in raw.columns]
    if header != OBSERVATION_COLUMNS:
        raise ParseError(f"header {','.join(header)!r} != {','.join(OBSERVATION_COLUMNS)!r}", line=1)
    raw.columns = header
    if raw.empty:
        raise EmptySeriesError(f"{path}: no observation rows")

    parsed = validate_observation_rows(raw).sort_index()
    grid = pd.date_range(parsed.index[0], parsed.index[-1], freq="10min", name="timestamp")
    data = parsed.reindex(grid)
    logger.info("loaded observations", extra={"fields": {
        "station": station.id, "rows": len(parsed), "slots": len(grid),
    }})
    return ObservationSeries(station=station, data=data)


def _format_float(value):
    return repr(float(value)) if np.isfinite(value) else ""


def observations_to_csv(series):
    """Serializes an ObservationSeries in the input CSV contract."""
    stamps = series.data.index.strftime(TIMESTAMP_FORMAT)
    columns = [[_format_float(v) for v in series.data[c].to_numpy()] for c in CHANNELS]
    lines = [",".join(OBSERVATION_COLUMNS)]
    lines.extend(",".join(row) for row in zip(stamps, *columns))
    return "\n".join(lines) + "\n"


def write_observations(series, path):
    """
    Writes an ObservationSeries so that load_observations reproduces it.
    Slots missing on every channel are still written as empty rows.
    """
    atomic_write(path, observations_to_csv(series))


# ---------------------------------------------------------------------------
# Gridded fields
# ---------------------------------------------------------------------------

def load_gridded(path):
    """
    Reads a gridded set: `path` is the directory holding manifest.json
    (or the manifest itself). Unknown field names are accepted as is.
    """
    manifest_path = path if os.path.isfile(path) else os.path.join(path, "manifest.json")
    if not os.path.isfile(manifest_path):
        raise FileNotFoundError(f"Gridded manifest not found: {manifest_path}")
    with open(manifest_path, "r", encoding="utf-8") as f:
        try:
            manifest = json.load(f)
        except json.JSONDecodeError as err:
            raise ParseError(f"{manifest_path}: {err.msg}", line=err.lineno) from err

    grid, start, count, files = validate_manifest(manifest)
    base = os.path.dirname(manifest_path)
    times = pd.date_range(start, periods=count, freq="h", name="timestamp")
    expected = count * grid["nlat"] * grid["nlon"]

    fields = {}
    for name, filename in files.items():
        file_path = os.path.join(base, filename)
        if not os.path.isfile(file_path):
            raise FileNotFoundError(f"Gridded field file not found: {file_path}")
        values = np.fromfile(file_path, dtype="<f8")
        if values.size != expected:
            raise IntegrityError(
                f"field {name}: {values.size} values, manifest declares "
                f"{count}x{grid['nlat']}x{grid['nlon']}={expected}"
            )
        fields[name] = values.reshape(count, grid["nlat"], grid["nlon"])

    gridded = make_gridded(grid["lat0"], grid["lon0"], grid["dlat"], grid["dlon"], times, fields)
    logger.info("loaded gridded set", extra={"fields": {
        "fields": len(fields), "hours": count, "nlat": grid["nlat"], "nlon": grid["nlon"],
    }})
    return gridded


def gridded_manifest(gridded):
    return {
        "grid": {
            "lat0": gridded.lat0, "lon0": gridded.lon0,
            "dlat": gridded.dlat, "dlon": gridded.dlon,
            "nlat": gridded.nlat, "nlon": gridded.nlon,
        },
        "times": {"start": gridded.times[0].strftime(TIMESTAMP_FORMAT), "count": len(gridded.times)},
        "dtype": "<f8",
        "fields": {name: f"{name}.bin" for name in gridded.names},
    }


def gridded_outputs(gridded, directory):
    """Returns {path: bytes-or-text} for a gridded set written under directory."""
    outputs = {os.path.join(directory, "manifest.json"): to_json(gridded_manifest(gridded))}
    for name in gridded.names:
        data = np.ascontiguousarray(gridded.fields[name], dtype="<f8").tobytes()
        outputs[os.path.join(directory, f"{name}.bin")] = data
    return outputs


def write_gridded(gridded, directory):
    for path, content in gridded_outputs(gridded, directory).items():
        atomic_write(path, content)


# ---------------------------------------------------------------------------
# Tabular exports
# ---------------------------------------------------------------------------

def frame_to_csv(df, index=False):
    """Deterministic CSV text: '\\n' line endings, empty cells for missing."""
    buf = io.StringIO()
    df.to_csv(buf, index=index, na_rep="", lineterminator="\n", date_format=TIMESTAMP_FORMAT)
    return buf.getvalue()


def read_csv_frame(path, parse_dates=("timestamp",)):
    """Reads a CSV written by frame_to_csv, restoring floats bit-exactly."""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"File not found: {path}")
    df = pd.read_csv(path, float_precision="round_trip")
    for col in parse_dates:
        if col in df.columns:
            df[col] = pd.to_datetime(df[col], utc=True, format="ISO8601")
    return df


def posteriors_to_csv(posteriors):
    """Posterior series export: timestamp,p,precondition with empty p for missing."""
    flags = ["" if pd.isna(v) else ("true" if v else "false") for v in posteriors.precondition.tolist()]
    df = pd.DataFrame({
        "timestamp": posteriors.p.index,
        "p": posteriors.p.to_numpy(),
        "precondition": flags,
    })
    return frame_to_csv(df)


def load_posterior_probabilities(path):
    """Reads a posterior CSV back to a float Series of p indexed by timestamp."""
    df = read_csv_frame(path)
    missing = [c for c in ("timestamp", "p") if c not in df.columns]
    if missing:
        raise ParseError(f"{path}: missing columns {missing}", line=1)
    return pd.Series(df["p"].to_numpy(dtype=float), index=pd.DatetimeIndex(df["timestamp"], name="timestamp"), name="p")


def series_to_csv(series, value_name):
    df = pd.DataFrame({"timestamp": series.index, value_name: series.to_numpy()})
    return frame_to_csv(df)


def load_series(path, value_name):
    df = read_csv_frame(path)
    if value_name not in df.columns:
        raise ParseError(f"{path}: missing column {value_name!r}", line=1)
    return pd.Series(df[value_name].to_numpy(dtype=float),
                     index=pd.DatetimeIndex(df["timestamp"], name="timestamp"), name=value_name)


def feature_table_outputs(table, csv_path):
    """FeatureTable as CSV plus a JSON column manifest next to it."""
    df = table.data.copy()
    df.insert(0, "timestamp", df.index)
    manifest = {
        "variable_set": table.variable_set,
        "dropped_rows": table.dropped_rows,
        "columns": [{"name": name, "recipe": table.provenance.get(name, {})} for name in table.data.columns],
    }
    manifest_path = os.path.splitext(csv_path)[0] + ".json"
    return {csv_path: frame_to_csv(df), manifest_path: to_json(manifest)}


def to_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Atomic output
# ---------------------------------------------------------------------------

def atomic_write(path, content):
    """
    Writes text or bytes to path through a temporary file in the same
    directory followed by a rename, so readers never see partial files.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    mode = "wb" if isinstance(content, (bytes, bytearray)) else "w"
    fd, tmp_path = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        if mode == "wb":
            with os.fdopen(fd, "wb") as f:
                f.write(content)
        else:
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
                f.write(content)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


class OutputSet:
    """
    Collects a command's declared outputs in memory and writes them only when
    commit() is called, so a failing command leaves nothing behind.
    """

    def __init__(self):
        self._pending = {}

    def add(self, path, content):
        self._pending[os.path.normpath(path)] = content

    def update(self, outputs):
        for path, content in outputs.items():
            self.add(path, content)

    def __len__(self):
        return len(self._pending)

    @property
    def paths(self):
        return sorted(self._pending)

    def commit(self):
        for path in sorted(self._pending):
            atomic_write(path, self._pending[path])
        written = len(self._pending)
        self._pending = {}
        return written

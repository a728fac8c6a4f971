import numpy as np
import pandas as pd

from utils.errors import IntegrityError, ObservationValueError, ParseError

OBSERVATION_COLUMNS = ["timestamp", "ff", "dd", "t", "rh"]
CHANNELS = ["ff", "dd", "t", "rh"]

# Closed/open physical bounds per channel: (low, high, high_inclusive)
CHANNEL_BOUNDS = {
    "ff": (0.0, np.inf, True),
    "dd": (0.0, 360.0, False),
    "rh": (0.0, 100.0, True),
}

GRID_KEYS = ["lat0", "lon0", "dlat", "dlon", "nlat", "nlon"]
ACCEPTED_DTYPES = {"<f8", "float64", "float64-le", "little-endian float64"}


def validate_observation_rows(raw):
    """
    Validates raw observation rows read as text and converts them to numbers.

    Parameters:
    - raw: DataFrame of strings with columns OBSERVATION_COLUMNS, one row per
      data line (line 1 of the file is the header)

    Returns:
    - DataFrame indexed by UTC timestamps with float columns ff, dd, t, rh
      (NaN = missing)

    Raises ParseError, ObservationValueError or IntegrityError naming the
    first offending line.
    """
    line_numbers = np.arange(len(raw)) + 2

    stamps_text = raw["timestamp"].fillna("").astype(str).str.strip()
    stamps = pd.to_datetime(stamps_text, format="ISO8601", utc=True, errors="coerce")
    bad = stamps.isna().to_numpy()
    if bad.any():
        i = int(np.argmax(bad))
        raise ParseError(f"malformed timestamp {stamps_text.iloc[i]!r}", line=int(line_numbers[i]))

    misaligned = (
        (stamps.dt.minute % 10 != 0)
        | (stamps.dt.second != 0)
        | (stamps.dt.microsecond != 0)
        | (stamps.dt.nanosecond != 0)
    ).to_numpy()
    if misaligned.any():
        i = int(np.argmax(misaligned))
        raise ParseError(f"timestamp {stamps_text.iloc[i]!r} is not on the 10-min grid",
                         line=int(line_numbers[i]))

    values = {}
    for col in CHANNELS:
        text = raw[col]
        absent_field = text.isna().to_numpy()
        if absent_field.any():
            i = int(np.argmax(absent_field))
            raise ParseError(f"row has too few fields (no {col})", line=int(line_numbers[i]))
        text = text.astype(str).str.strip()
        empty = (text == "").to_numpy()
        numbers = pd.to_numeric(text.where(~empty), errors="coerce").to_numpy(dtype=float)
        invalid = (~empty) & ~np.isfinite(numbers)
        if invalid.any():
            i = int(np.argmax(invalid))
            raise ParseError(f"non-numeric {col} value {text.iloc[i]!r}", line=int(line_numbers[i]))

        if col in CHANNEL_BOUNDS:
            low, high, high_inclusive = CHANNEL_BOUNDS[col]
            with np.errstate(invalid="ignore"):
                above = numbers > high if high_inclusive else numbers >= high
                out_of_range = (~empty) & ((numbers < low) | above)
            if out_of_range.any():
                i = int(np.argmax(out_of_range))
                closing = "]" if high_inclusive else ")"
                raise ObservationValueError(
                    f"{col}={numbers[i]:g} outside [{low:g}, {high:g}{closing}",
                    line=int(line_numbers[i]),
                )
        values[col] = numbers

    duplicated = stamps.duplicated(keep="first").to_numpy()
    if duplicated.any():
        i = int(np.argmax(duplicated))
        raise IntegrityError(f"line {int(line_numbers[i])}: duplicate timestamp {stamps_text.iloc[i]}")

    index = pd.DatetimeIndex(stamps, name="timestamp")
    return pd.DataFrame(values, index=index, columns=CHANNELS)


def validate_manifest(manifest):
    """
    Checks the gridded-set manifest structure.

    Returns: (grid dict, start Timestamp, count int, fields dict name -> file)
    """
    for key in ("grid", "times", "fields"):
        if key not in manifest:
            raise IntegrityError(f"manifest lacks '{key}'")

    grid = manifest["grid"]
    missing = [k for k in GRID_KEYS if k not in grid]
    if missing:
        raise IntegrityError(f"manifest grid lacks {missing}")
    grid = {
        "lat0": float(grid["lat0"]),
        "lon0": float(grid["lon0"]),
        "dlat": float(grid["dlat"]),
        "dlon": float(grid["dlon"]),
        "nlat": int(grid["nlat"]),
        "nlon": int(grid["nlon"]),
    }
    if grid["dlat"] <= 0 or grid["dlon"] <= 0:
        raise IntegrityError("grid spacing must be positive (axes strictly increasing)")
    if grid["nlat"] < 2 or grid["nlon"] < 2:
        raise IntegrityError("grid needs at least 2 points along each axis")

    times = manifest["times"]
    try:
        start = pd.Timestamp(times["start"])
        count = int(times["count"])
    except (KeyError, ValueError, TypeError) as err:
        raise IntegrityError(f"manifest times invalid: {err}") from err
    start = start.tz_localize("UTC") if start.tzinfo is None else start.tz_convert("UTC")
    if count < 1:
        raise IntegrityError("manifest declares no time steps")
    if start.minute != 0 or start.second != 0 or start.microsecond != 0:
        raise IntegrityError("gridded time axis must start on a full hour")

    dtype = str(manifest.get("dtype", "<f8"))
    if dtype not in ACCEPTED_DTYPES:
        raise IntegrityError(f"unsupported dtype {dtype!r}; expected little-endian float64")

    fields = manifest["fields"]
    if not isinstance(fields, dict) or not fields:
        raise IntegrityError("manifest declares no fields")
    return grid, start, count, {str(k): str(v) for k, v in fields.items()}


def validate_station_coordinates(station_id, lat, lon, altitude):
    """Raises ValueError when coordinates are outside the globe or altitude is not finite."""
    if not -90.0 <= lat <= 90.0:
        raise ValueError(f"station {station_id}: lat {lat} outside [-90, 90]")
    if not -180.0 <= lon <= 180.0:
        raise ValueError(f"station {station_id}: lon {lon} outside [-180, 180]")
    if not np.isfinite(altitude):
        raise ValueError(f"station {station_id}: altitude must be finite")

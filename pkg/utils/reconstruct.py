"""
Module: reconstruct.py
Responsibilities:
- Apply the 24 hour-of-day models of a station over a long gridded span
- Count the hours of a span (leap-aware)
- Compare the reconstruction with observation-based annual means
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd

from utils.data_processor import annual_daily_max, foehn_hours_per_year
from utils.errors import ContractError, RangeError
from utils.file_handler import frame_to_csv
from utils.learners import predict
from utils.logger import get_logger

logger = get_logger(__name__)

HOURS = tuple(range(24))
OBS_MIN_AVAILABILITY = 0.8
REPORT_COLUMNS = ["year", "recon_annual_mean", "obs_annual_mean", "obs_availability", "obs_foehn_hours"]


@dataclass(frozen=True)
class Reconstruction:
    station: str
    learner: str
    variable_set: str
    p: pd.Series

    @property
    def times(self):
        return self.p.index

    def __len__(self):
        return len(self.p)


def _timestamp(value):
    ts = pd.Timestamp(value)
    return ts.tz_localize("UTC") if ts.tz is None else ts.tz_convert("UTC")


def hourly_span(start, end):
    start, end = _timestamp(start), _timestamp(end)
    if end < start:
        raise RangeError(f"span end {end} precedes start {start}")
    return pd.date_range(start, end, freq="h", name="timestamp")


def span_hours(start, end):
    """Number of hourly instants from start to end, both included."""
    start, end = _timestamp(start), _timestamp(end)
    if end < start:
        raise RangeError(f"span end {end} precedes start {start}")
    return int((end - start) // pd.Timedelta(hours=1)) + 1


def reconstruct(models, features, span=None, station="", learner="", variable_set=""):
    """
    Hourly probabilities over a span, each hour predicted by the model whose
    hour-of-day matches the timestamp.

    Parameters:
    - models: {hour: fitted model} for all 24 hours
    - features: FeatureTable or DataFrame indexed by timestamp
    - span: (start, end) to reconstruct; defaults to the feature time axis,
      which must then be gap-free

    Returns:
    - Reconstruction of exactly span_hours(start, end) values
    """
    missing = [h for h in HOURS if h not in models]
    if missing:
        raise ContractError(f"no model for hour(s) {missing}")
    frame = getattr(features, "data", features)
    if frame.empty:
        raise RangeError("feature table is empty")

    if span is None:
        times = hourly_span(frame.index[0], frame.index[-1])
    else:
        times = hourly_span(*span)
    absent = times.difference(frame.index)
    if len(absent):
        raise RangeError(
            f"features do not cover {len(absent)} hour(s) of the span {times[0]} .. {times[-1]}; "
            f"first uncovered {absent[0]}"
        )
    rows = frame.loc[times]

    p = np.empty(len(times))
    for hour in HOURS:
        at = np.flatnonzero(times.hour == hour)
        if at.size:
            p[at] = predict(models[hour], rows.iloc[at])
    logger.info("reconstructed", extra={"fields": {
        "station": station, "learner": learner, "set": variable_set,
        "hours": len(times), "mean_p": float(p.mean()),
    }})
    return Reconstruction(station, learner, variable_set, pd.Series(p, index=times, name="p"))


def reconstruction_to_csv(recon):
    return frame_to_csv(pd.DataFrame({"timestamp": recon.p.index, "p": recon.p.to_numpy()}))


def reconstruction_report(recon, observed=None):
    """
    Per-year comparison table.

    Parameters:
    - recon: Reconstruction
    - observed: hourly label series (1/0/NaN) or None

    Returns:
    - DataFrame with columns year, recon_annual_mean, obs_annual_mean,
      obs_availability, obs_foehn_hours; the observed annual mean is left
      empty for years with less than 80% of days available
    """
    recon_annual = annual_daily_max(recon.p, min_availability=0.0).values
    years = list(recon_annual.index.year)
    report = pd.DataFrame({"year": years, "recon_annual_mean": recon_annual.to_numpy()})

    if observed is None:
        report["obs_annual_mean"] = np.nan
        report["obs_availability"] = np.nan
        report["obs_foehn_hours"] = pd.array([pd.NA] * len(report), dtype="Int64")
        return report[REPORT_COLUMNS]

    labels = getattr(observed, "label", observed)
    obs = annual_daily_max(labels, min_availability=OBS_MIN_AVAILABILITY)
    obs_frame = pd.DataFrame({
        "year": obs.values.index.year,
        "obs_annual_mean": obs.values.to_numpy(),
        "obs_availability": obs.availability.to_numpy(),
    })
    hours = foehn_hours_per_year(labels)
    hours_frame = pd.DataFrame({"year": hours.index, "obs_foehn_hours": hours["foehn_hours"].to_numpy()})

    report = (
        report.merge(obs_frame, on="year", how="outer")
        .merge(hours_frame, on="year", how="outer")
        .sort_values("year")
        .reset_index(drop=True)
    )
    report["obs_foehn_hours"] = report["obs_foehn_hours"].astype("Int64")
    return report[REPORT_COLUMNS]


def report_to_csv(report):
    return frame_to_csv(report)

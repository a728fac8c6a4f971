import calendar
import numpy as np
import pandas as pd
from dataclasses import dataclass

from utils.errors import ContractError
from utils.file_handler import HOUR, frame_to_csv

FOEHN = "foehn"
NO_FOEHN = "no_foehn"
MISSING = "missing"

MIN_SLOTS = 4
SLOTS_PER_HOUR = 6
HOURS_PER_DAY = 24


@dataclass(frozen=True)
class HourlyLabelSeries:
    """
    Hourly labels coded 1.0 (foehn), 0.0 (no foehn), NaN (missing). The label
    at T summarizes the 10-min slots in (T-50min, T].
    """
    label: pd.Series
    station: str = ""

    @property
    def index(self):
        return self.label.index

    def available(self):
        return self.label.dropna()


@dataclass(frozen=True)
class AggregateSeries:
    """Values per period start; availability is the fraction of contributing slots present."""
    period: str  # daily_max, monthly_mean_of_daily_max, annual_mean_of_daily_max
    values: pd.Series
    availability: pd.Series


def _series(obj):
    if isinstance(obj, HourlyLabelSeries):
        return obj.label
    if hasattr(obj, "p") and isinstance(obj.p, pd.Series):
        return obj.p
    return obj


def hourly_label(posteriors):
    """
    Upscales the 10-min posteriors of one hour window to a label.

    Parameters:
    - posteriors: up to 6 probabilities; None/NaN = missing

    Returns:
    - MISSING if fewer than 4 are available, FOEHN if at least half of the
      available ones are >= 0.5, else NO_FOEHN
    """
    values = np.array([np.nan if v is None else v for v in posteriors], dtype=float)
    if values.size > SLOTS_PER_HOUR:
        raise ContractError(f"an hour has at most {SLOTS_PER_HOUR} slots, got {values.size}")
    available = values[~np.isnan(values)]
    if available.size < MIN_SLOTS:
        return MISSING
    high = int(np.count_nonzero(available >= 0.5))
    return FOEHN if 2 * high >= available.size else NO_FOEHN


def upscale_hourly(posteriors, station=""):
    """
    Applies hourly_label to every hour of a 10-min posterior series.
    Slot t belongs to the hour ceil(t); hours without any slot are missing.
    """
    p = _series(posteriors)
    if len(p) == 0:
        return HourlyLabelSeries(pd.Series([], dtype=float, name="label"), station)
    hours = p.index.ceil("h")
    frame = pd.DataFrame({
        "n": p.notna().to_numpy(),
        "high": (p >= 0.5).to_numpy(),
    }, index=p.index)
    counts = frame.groupby(hours).sum()
    n = counts["n"].to_numpy()
    high = counts["high"].to_numpy()
    label = np.where(n < MIN_SLOTS, np.nan, np.where(2 * high >= n, 1.0, 0.0))

    grid = pd.date_range(counts.index[0], counts.index[-1], freq="h", name="timestamp")
    series = pd.Series(label, index=counts.index, name="label").reindex(grid)
    return HourlyLabelSeries(series, station)


def daily_max(hourly):
    """
    Daily maxima of an hourly probability (or label) series.
    A day d owns the hours labeled (d 00:00, d+1 00:00].

    Returns: AggregateSeries with availability = available hours / 24
    """
    s = _series(hourly)
    keys = (s.index - HOUR).floor("D")
    grouped = s.groupby(keys)
    values = grouped.max()
    availability = grouped.count() / HOURS_PER_DAY

    days = pd.date_range(keys.min(), keys.max(), freq="D", name="period_start")
    values = values.reindex(days)
    availability = availability.reindex(days, fill_value=0.0)
    values.name, availability.name = "value", "availability"
    return AggregateSeries("daily_max", values, availability)


def _period_starts(index, period):
    naive = index.tz_localize(None) if index.tz is not None else index
    if period == "month":
        starts = naive.to_period("M").to_timestamp()
    elif period == "year":
        starts = naive.to_period("Y").to_timestamp()
    else:
        raise ValueError(f"period must be 'month' or 'year', got {period!r}")
    return starts.tz_localize("UTC") if index.tz is not None else starts


def periodic_mean(daily, period, min_availability=0.8):
    """
    Mean of the available daily values per month or year.

    Parameters:
    - daily: AggregateSeries from daily_max
    - period: "month" or "year"
    - min_availability: fraction of calendar days with a value required;
      0.8 for observation-based series, 0.0 for reconstructions

    Returns: AggregateSeries; periods below the threshold are missing
    """
    values = daily.values
    starts = _period_starts(values.index, period)
    grouped = values.groupby(starts)
    means = grouped.mean()
    present = grouped.count()

    index = means.index
    if period == "month":
        calendar_days = index.days_in_month.to_numpy()
    else:
        calendar_days = np.where(index.is_leap_year, 366, 365)
    availability = pd.Series(present.to_numpy() / calendar_days, index=index, name="availability")
    means = means.where(availability >= min_availability)
    means.name = "value"
    means.index.name = availability.index.name = "period_start"
    kind = "monthly_mean_of_daily_max" if period == "month" else "annual_mean_of_daily_max"
    return AggregateSeries(kind, means, availability)


def monthly_daily_max(hourly, min_availability=0.0):
    """Monthly means of the daily maxima (input of the season-trend decomposition)."""
    return periodic_mean(daily_max(hourly), "month", min_availability)


def annual_daily_max(hourly, min_availability=0.0):
    return periodic_mean(daily_max(hourly), "year", min_availability)


def hovmoller(hourly, decade=None):
    """
    Mean probability per (month, hour-of-day) cell.

    Parameters:
    - hourly: hourly probability series
    - decade: first year of a decade (1940 = 1940-1949) or None for all years

    Returns: DataFrame, 12 rows (months 1..12) x 24 columns (hours 0..23)
    """
    s = _series(hourly)
    if decade is not None:
        s = s[(s.index.year // 10) * 10 == decade]
    matrix = (
        s.groupby([s.index.month, s.index.hour])
        .mean()
        .unstack()
        .reindex(index=range(1, 13), columns=range(HOURS_PER_DAY))
    )
    matrix.index.name, matrix.columns.name = "month", "hour"
    return matrix


def hovmoller_by_decade(hourly):
    """One hovmoller matrix per decade present in the series, keyed by decade start year."""
    s = _series(hourly)
    decades = sorted(set((s.index.year // 10) * 10))
    return {int(d): hovmoller(s, decade=d) for d in decades}


def foehn_hours_per_year(labels):
    """
    Hours labeled foehn per calendar year plus the fraction of hours labeled
    at all.
    """
    s = _series(labels)
    years = s.index.year
    foehn = (s == 1.0).groupby(years).sum()
    labeled = s.groupby(years).count()
    hours_in_year = np.array([8784 if calendar.isleap(y) else 8760 for y in foehn.index])
    return pd.DataFrame({
        "foehn_hours": foehn.to_numpy().astype(int),
        "availability": labeled.to_numpy() / hours_in_year,
    }, index=pd.Index(foehn.index, name="year"))


def labels_to_csv(labels):
    s = _series(labels)
    return frame_to_csv(pd.DataFrame({"timestamp": s.index, "label": s.to_numpy()}))


def aggregate_to_csv(agg):
    """Aggregate export: period_start,value,availability."""
    df = pd.DataFrame({
        "period_start": agg.values.index,
        "value": agg.values.to_numpy(),
        "availability": agg.availability.to_numpy(),
    })
    return frame_to_csv(df)


def hovmoller_to_csv(matrix):
    df = matrix.copy()
    df.columns = [f"{h:02d}" for h in df.columns]
    return frame_to_csv(df.reset_index())

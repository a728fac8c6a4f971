"""
Module: decompose.py
Responsibilities:
- Additive season-trend decomposition y = T + S + R of a monthly series by
  penalized least squares
- Smoothing weights chosen by generalized cross-validation on a log grid
- Pointwise 95% bands for the trend and a trend-significance check
- Decade-averaged seasonal cycles
"""
from dataclasses import dataclass

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse

from utils.config import DECOMPOSE_GRID
from utils.errors import ContractError, EstimationError
from utils.file_handler import frame_to_csv
from utils.logger import get_logger

logger = get_logger(__name__)

MONTHS = 12
MIN_MONTHS = 36
Z95 = 1.96


@dataclass(frozen=True)
class StrFit:
    times: pd.DatetimeIndex
    y: np.ndarray
    trend: np.ndarray
    seasonal: np.ndarray
    remainder: np.ndarray
    ci_lower: np.ndarray
    ci_upper: np.ndarray
    surface: pd.DataFrame  # year x month seasonal values
    lambda_trend: float
    lambda_seasonal: float
    sigma2: float
    edf: float
    gcv: float

    @property
    def years(self):
        return self.times.year.to_numpy()

    @property
    def months(self):
        return self.times.month.to_numpy()


def _second_difference(n):
    if n < 3:
        return scipy.sparse.csr_matrix((0, n))
    return scipy.sparse.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(n - 2, n), format="csr")


def seasonal_basis():
    """12 x 11 orthonormal basis of zero-sum month vectors."""
    return scipy.linalg.helmert(MONTHS).T


class _System:
    """Design and penalty blocks of the decomposition for one time axis."""

    def __init__(self, times):
        self.J = len(times)
        first_year = int(times.year[0])
        self.year_index = times.year.to_numpy() - first_year
        self.month_index = times.month.to_numpy() - 1
        self.n_years = int(self.year_index.max()) + 1
        self.basis = seasonal_basis()
        k = self.basis.shape[1]
        self.k = k

        cols = (self.year_index[:, None] * k + np.arange(k)[None, :]).ravel()
        rows = np.repeat(np.arange(self.J), k)
        vals = self.basis[self.month_index].ravel()
        Z = scipy.sparse.csr_matrix((vals, (rows, cols)), shape=(self.J, self.n_years * k))
        self.X = scipy.sparse.hstack([scipy.sparse.identity(self.J, format="csr"), Z], format="csr")
        self.XtX = (self.X.T @ self.X).toarray()

        D_t = _second_difference(self.J)
        self.P_trend = (D_t.T @ D_t).toarray()
        D_y = _second_difference(self.n_years)
        self.P_seasonal = scipy.sparse.kron(D_y.T @ D_y, scipy.sparse.identity(k)).toarray()

    def penalty(self, lambda_trend, lambda_seasonal):
        n = self.XtX.shape[0]
        P = np.zeros((n, n))
        P[:self.J, :self.J] = lambda_trend * self.P_trend
        P[self.J:, self.J:] = lambda_seasonal * self.P_seasonal
        return P

    def solve(self, y, lambda_trend, lambda_seasonal):
        A = self.XtX + self.penalty(lambda_trend, lambda_seasonal)
        try:
            factor = scipy.linalg.cho_factor(A, lower=True)
        except np.linalg.LinAlgError as err:
            raise EstimationError(
                f"decomposition system is singular (J={self.J}, lambda_trend={lambda_trend}, "
                f"lambda_seasonal={lambda_seasonal})"
            ) from err
        coef = scipy.linalg.cho_solve(factor, self.X.T @ y)
        A_inv = scipy.linalg.cho_solve(factor, np.eye(A.shape[0]))
        edf = float(np.sum(A_inv * self.XtX))
        return coef, A_inv, edf

    def split(self, coef):
        T = coef[:self.J]
        G = coef[self.J:].reshape(self.n_years, self.k)
        surface = G @ self.basis.T
        S = surface[self.year_index, self.month_index]
        return T, S, surface


def _monthly(y, start):
    if isinstance(y, pd.Series):
        if not isinstance(y.index, pd.DatetimeIndex):
            raise ContractError("a monthly series needs a DatetimeIndex")
        index = y.index.tz_localize(None) if y.index.tz is not None else y.index
        times = index.to_period("M").to_timestamp()
        values = y.to_numpy(dtype=float)
    else:
        if start is None:
            raise ContractError("start=(year, month) is required for plain arrays")
        values = np.asarray(y, dtype=float).ravel()
        times = pd.date_range(pd.Timestamp(year=start[0], month=start[1], day=1), periods=len(values), freq="MS")
    expected = pd.date_range(times[0], periods=len(times), freq="MS")
    if len(times) and not times.equals(expected):
        raise ContractError("monthly series must be consecutive months without gaps")
    return pd.DatetimeIndex(times, name="month"), values


def gcv_score(rss, J, edf):
    if J - edf <= 0:
        return np.inf
    return J * rss / (J - edf) ** 2


def fit_str(y, lambda_trend=None, lambda_seasonal=None, grid=DECOMPOSE_GRID, start=None):
    """
    Penalized least-squares season-trend decomposition.

    Parameters:
    - y: monthly Series (DatetimeIndex) or array with start=(year, month);
      an AggregateSeries from monthly_daily_max is accepted too
    - lambda_trend, lambda_seasonal: smoothing weights; each one left as
      None is chosen by GCV over grid
    - grid: candidate weights

    Returns:
    - StrFit with exact additivity y = trend + seasonal + remainder
    """
    y = getattr(y, "values", y) if not isinstance(y, (pd.Series, np.ndarray, list, tuple)) else y
    times, values = _monthly(y, start)
    J = len(values)
    if J < MIN_MONTHS:
        raise EstimationError(f"decomposition needs at least {MIN_MONTHS} months, got {J}")
    if not np.all(np.isfinite(values)):
        raise ContractError("decomposition input contains missing values")

    system = _System(times)
    trend_grid = [float(lambda_trend)] if lambda_trend is not None else [float(g) for g in grid]
    seasonal_grid = [float(lambda_seasonal)] if lambda_seasonal is not None else [float(g) for g in grid]

    best = None
    for lt in trend_grid:
        for ls in seasonal_grid:
            coef, A_inv, edf = system.solve(values, lt, ls)
            rss = float(np.sum((values - system.X @ coef) ** 2))
            score = gcv_score(rss, J, edf)
            if best is None or score < best[0]:
                best = (score, lt, ls, coef, A_inv, edf, rss)
    score, lt, ls, coef, A_inv, edf, rss = best
    if J - edf <= 0:
        raise EstimationError(f"no residual degrees of freedom (J={J}, edf={edf:.3f})")

    T, S, surface = system.split(coef)
    R = values - T - S
    sigma2 = rss / (J - edf)
    # trend smoother T = S_T y with S_T = E_T A^-1 X^T; the band uses its diagonal
    leverage = np.diag(system.X @ A_inv[:, :J])
    half = Z95 * np.sqrt(sigma2 * np.clip(leverage, 0.0, None))

    first_year = int(times.year[0])
    surface_frame = pd.DataFrame(
        surface,
        index=pd.Index(range(first_year, first_year + system.n_years), name="year"),
        columns=pd.Index(range(1, MONTHS + 1), name="month"),
    )
    logger.info("decomposition fitted", extra={"fields": {
        "months": J, "lambda_trend": lt, "lambda_seasonal": ls, "edf": edf, "sigma2": sigma2,
    }})
    return StrFit(
        times=times, y=values, trend=T, seasonal=S, remainder=R,
        ci_lower=T - half, ci_upper=T + half, surface=surface_frame,
        lambda_trend=lt, lambda_seasonal=ls, sigma2=float(sigma2), edf=edf, gcv=float(score),
    )


def trend_significance(fit):
    """True when no horizontal line fits inside the trend band everywhere."""
    return bool(np.max(fit.ci_lower) > np.min(fit.ci_upper))


def seasonal_surface(fit):
    return fit.surface.copy()


def decade_seasonal(fit):
    """
    Mean seasonal value per month and decade (1940 = 1940-1949) plus the
    all-period mean in column 'all'.

    Returns: DataFrame, 12 rows (months) x one column per decade + 'all'
    """
    surface = fit.surface
    decades = (surface.index // 10) * 10
    matrix = surface.groupby(decades).mean().T
    matrix.columns = [int(c) for c in matrix.columns]
    matrix["all"] = surface.mean(axis=0)
    matrix.index.name = "month"
    return matrix


def fit_to_csv(fit):
    """Fit export: t,year,month,y,trend,ci_lo,ci_hi,seasonal,remainder."""
    df = pd.DataFrame({
        "t": np.arange(1, len(fit.y) + 1),
        "year": fit.years,
        "month": fit.months,
        "y": fit.y,
        "trend": fit.trend,
        "ci_lo": fit.ci_lower,
        "ci_hi": fit.ci_upper,
        "seasonal": fit.seasonal,
        "remainder": fit.remainder,
    })
    return frame_to_csv(df)


def decade_seasonal_to_csv(matrix):
    df = matrix.copy()
    df.columns = [str(c) for c in df.columns]
    return frame_to_csv(df.reset_index())

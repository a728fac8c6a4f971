"""
Foehn classification from paired valley/crest observations.

A two-component Gaussian mixture on the potential temperature difference
with a logistic concomitant model (relative humidity, wind speed) is fitted
by EM on the slots passing the wind-sector precondition. Slots failing the
precondition get probability 0; slots lacking inputs stay missing.
"""
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, log_expit, logit
from scipy.stats import norm

from utils.errors import ContractError, DegenerateFitError, EmptySeriesError, EstimationError
from utils.logger import get_logger

logger = get_logger(__name__)

DRY_ADIABATIC_LAPSE = 0.01  # K per m
SIGMA_COLLAPSE = 1e-3


@dataclass(frozen=True)
class WindSector:
    from_deg: float
    to_deg: float

    def __post_init__(self):
        for name in ("from_deg", "to_deg"):
            value = getattr(self, name)
            if not 0.0 <= value < 360.0:
                raise ValueError(f"sector {name}={value} outside [0, 360)")

    def contains(self, dd):
        return sector_contains(dd, self)

    @property
    def wraps(self):
        return self.from_deg > self.to_deg


@dataclass(frozen=True)
class MixtureOptions:
    min_sample: int = 500
    tol: float = 1e-6
    max_iter: int = 1000


@dataclass(frozen=True)
class MixtureParams:
    """
    Fitted mixture. Component 1 is 'no foehn', component 2 is 'foehn'
    (mu2 > mu1). alpha acts on [1, z-scored concomitants]; x_mean/x_sd hold
    the standardization of the concomitant columns.
    """
    mu1: float
    sigma1: float
    mu2: float
    sigma2: float
    alpha: tuple
    x_mean: tuple = ()
    x_sd: tuple = ()
    loglik_trace: tuple = ()
    n_used: int = 0
    iterations: int = 0
    converged: bool = False
    bic_mixture: float = float("nan")
    bic_single: float = float("nan")
    degenerate: bool = False

    def design(self, x):
        """[1, standardized concomitants] for raw rows laid out like em_fit's X."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        k = len(self.alpha)
        if x.shape[1] == k:
            cov = x[:, 1:]
        elif x.shape[1] == k - 1:
            cov = x
        else:
            raise ContractError(f"concomitant rows have {x.shape[1]} columns, model expects {k - 1} (+ intercept)")
        if cov.shape[1]:
            cov = (cov - np.asarray(self.x_mean)) / np.asarray(self.x_sd)
        return np.column_stack([np.ones(len(x)), cov])

    def prior(self, x):
        """Concomitant probability pi of the foehn component."""
        return expit(self.design(x) @ np.asarray(self.alpha))

    def to_dict(self):
        return {
            "mu1": self.mu1, "sigma1": self.sigma1, "mu2": self.mu2, "sigma2": self.sigma2,
            "alpha": list(self.alpha), "x_mean": list(self.x_mean), "x_sd": list(self.x_sd),
            "loglik_trace": list(self.loglik_trace), "n_used": self.n_used,
            "iterations": self.iterations, "converged": self.converged,
            "bic_mixture": self.bic_mixture, "bic_single": self.bic_single,
            "degenerate": self.degenerate,
        }


@dataclass(frozen=True)
class PosteriorSeries:
    """10-min foehn probabilities; p is NaN where inputs are missing."""
    p: pd.Series
    precondition: pd.Series
    params: MixtureParams = None
    coverage: dict = field(default_factory=dict)

    @property
    def timestamps(self):
        return self.p.index


def _in_sector(dd, sector):
    dd = np.asarray(dd, dtype=float)
    with np.errstate(invalid="ignore"):
        if sector.from_deg <= sector.to_deg:
            return (dd >= sector.from_deg) & (dd <= sector.to_deg)
        return (dd >= sector.from_deg) | (dd <= sector.to_deg)


def sector_contains(dd, sector):
    """
    True iff dd lies on the closed clockwise arc from sector.from_deg to
    sector.to_deg; arcs with from > to cross north.
    """
    dd = float(dd)
    if not 0.0 <= dd < 360.0:
        raise ValueError(f"wind direction {dd} outside [0, 360)")
    return bool(_in_sector(dd, sector))


def delta_theta(t_valley, t_crest, dh):
    """
    Dry-adiabatic potential temperature difference valley minus crest (degC),
    dh = altitude(crest) - altitude(valley) in meters.
    """
    tv = np.asarray(t_valley, dtype=float)
    tc = np.asarray(t_crest, dtype=float)
    dh = np.asarray(dh, dtype=float)
    if not (np.all(np.isfinite(tv)) and np.all(np.isfinite(tc)) and np.all(np.isfinite(dh))):
        raise ValueError("delta_theta inputs must be finite")
    out = tv - tc - DRY_ADIABATIC_LAPSE * dh
    return float(out) if out.ndim == 0 else out


def precondition_mask(valley, crest, valley_sector, crest_sector):
    """
    Per 10-min slot on the common grid: missing (NA) if any required input is
    missing (valley dd/t/rh/ff, crest dd/t), else True iff both directions
    fall in their sectors.
    """
    common = valley.data.index.intersection(crest.data.index)
    if len(common) == 0:
        raise EmptySeriesError(
            f"observation ranges of {valley.station.id} and {crest.station.id} do not overlap"
        )
    v = valley.data.loc[common]
    c = crest.data.loc[common]
    available = (v[["dd", "t", "rh", "ff"]].notna().all(axis=1)
                 & c[["dd", "t"]].notna().all(axis=1)).to_numpy()
    inside = _in_sector(v["dd"].to_numpy(), valley_sector) & _in_sector(c["dd"].to_numpy(), crest_sector)

    mask = pd.Series(pd.array(inside, dtype="boolean"), index=common, name="precondition")
    mask[~available] = pd.NA
    return mask


def _weighted_moments(y, w, component):
    total = w.sum()
    if total <= 1e-8:
        raise DegenerateFitError(f"component {component} has no weight left", component=component)
    mu = float(np.dot(w, y) / total)
    sigma = float(np.sqrt(np.dot(w, (y - mu) ** 2) / total))
    if not sigma >= SIGMA_COLLAPSE:
        raise DegenerateFitError(
            f"component {component} collapsed (sigma={sigma:.3g} < {SIGMA_COLLAPSE})", component=component
        )
    return mu, sigma


def _concomitant_objective(Z, z, alpha):
    eta = Z @ alpha
    return float(np.sum(z * log_expit(eta) + (1.0 - z) * log_expit(-eta)))


def _fit_concomitant(Z, z, alpha, max_iter=25, tol=1e-10):
    """
    Weighted IRLS for the concomitant logistic model with fractional
    responses z. Steps are halved until the objective does not decrease.
    """
    alpha = np.array(alpha, dtype=float)
    current = _concomitant_objective(Z, z, alpha)
    for _ in range(max_iter):
        p = expit(Z @ alpha)
        grad = Z.T @ (z - p)
        hess = (Z * (p * (1.0 - p))[:, None]).T @ Z
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        t = 1.0
        for _ in range(30):
            candidate = alpha + t * step
            value = _concomitant_objective(Z, z, candidate)
            if value >= current:
                break
            t *= 0.5
        else:
            break
        moved = np.max(np.abs(candidate - alpha))
        alpha, current = candidate, value
        if moved < tol:
            break
    return alpha


def _e_step(y, Z, alpha, mu1, s1, mu2, s2):
    eta = Z @ alpha
    l1 = log_expit(-eta) + norm.logpdf(y, mu1, s1)
    l2 = log_expit(eta) + norm.logpdf(y, mu2, s2)
    lse = np.logaddexp(l1, l2)
    return float(lse.sum()), np.exp(l2 - lse)


def em_fit(y, X, mask=None, min_sample=500, tol=1e-6, max_iter=1000, swap_init=False):
    """
    Fits the two-component Gaussian mixture with logistic concomitants by EM.

    Parameters:
    - y: potential temperature differences
    - X: concomitant matrix; either [1, rh, ff] (intercept first) or [rh, ff]
    - mask: optional boolean selection (missing counts as False)
    - min_sample: smallest accepted sample after masking
    - tol: relative log-likelihood gain below which EM stops
    - max_iter: iteration cap
    - swap_init: start with the upper Delta-theta half in component 1

    Returns:
    - MixtureParams with component 2 = larger mean (foehn)
    """
    y = np.asarray(y, dtype=float)
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if len(X) != len(y):
        raise ContractError(f"y has {len(y)} rows, X has {len(X)}")
    if mask is not None:
        keep = np.asarray(pd.array(mask, dtype="boolean").fillna(False), dtype=bool)
        y, X = y[keep], X[keep]
    n = len(y)
    if n < min_sample:
        raise EstimationError(f"only {n} observations pass the precondition (minimum {min_sample})")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(X))):
        raise EstimationError("mixture inputs contain non-finite values")

    has_intercept = X.shape[1] > 0 and np.all(X[:, 0] == 1.0)
    cov = X[:, 1:] if has_intercept else X
    x_mean = cov.mean(axis=0)
    x_sd = cov.std(axis=0)
    x_sd[x_sd == 0.0] = 1.0
    Z = np.column_stack([np.ones(n), (cov - x_mean) / x_sd])

    upper = y > np.median(y)
    if upper.all() or not upper.any():
        raise DegenerateFitError("median split leaves one component empty", component=2)
    z = upper.astype(float)
    if swap_init:
        z = 1.0 - z
    alpha = np.zeros(Z.shape[1])
    alpha[0] = logit(z.mean())

    trace = []
    converged = False
    for iteration in range(1, max_iter + 1):
        mu1, s1 = _weighted_moments(y, 1.0 - z, component=1)
        mu2, s2 = _weighted_moments(y, z, component=2)
        alpha = _fit_concomitant(Z, z, alpha)
        loglik, z = _e_step(y, Z, alpha, mu1, s1, mu2, s2)
        trace.append(loglik)
        if len(trace) > 1 and trace[-1] - trace[-2] < tol * abs(trace[-2]):
            converged = True
            break

    if mu2 < mu1:
        mu1, s1, mu2, s2 = mu2, s2, mu1, s1
        alpha = -alpha

    k = Z.shape[1]
    bic_mixture = -2.0 * trace[-1] + (4 + k) * np.log(n)
    single = float(norm.logpdf(y, y.mean(), y.std()).sum())
    bic_single = -2.0 * single + 2 * np.log(n)
    degenerate = bool(bic_mixture >= bic_single)

    params = MixtureParams(
        mu1=float(mu1), sigma1=float(s1), mu2=float(mu2), sigma2=float(s2),
        alpha=tuple(float(a) for a in alpha),
        x_mean=tuple(float(m) for m in x_mean), x_sd=tuple(float(s) for s in x_sd),
        loglik_trace=tuple(trace), n_used=n, iterations=iteration, converged=converged,
        bic_mixture=float(bic_mixture), bic_single=float(bic_single), degenerate=degenerate,
    )
    fields = {"n": n, "iterations": iteration, "mu1": mu1, "mu2": mu2, "sigma1": s1, "sigma2": s2}
    if degenerate:
        logger.warning("mixture does not beat a single Gaussian by BIC", extra={"fields": fields})
    else:
        logger.info("mixture fitted", extra={"fields": fields})
    if not converged:
        logger.warning("EM stopped at max_iter", extra={"fields": {"max_iter": max_iter}})
    return params


def posterior(y, x, params):
    """
    A-posteriori probability of the foehn component:
    pi N(y; mu2, sigma2) / [(1 - pi) N(y; mu1, sigma1) + pi N(y; mu2, sigma2)].
    x is a concomitant row (or matrix) laid out like em_fit's X.
    """
    y_arr = np.asarray(y, dtype=float)
    eta = params.design(x) @ np.asarray(params.alpha)
    log_ratio = (eta
                 + norm.logpdf(y_arr, params.mu2, params.sigma2)
                 - norm.logpdf(y_arr, params.mu1, params.sigma1))
    p = expit(log_ratio)
    if y_arr.ndim == 0:
        return float(np.ravel(p)[0])
    return p


def classify_series(valley, crest, target, options=None):
    """
    Precondition mask + mixture fit + posterior for one valley/crest pair.

    Parameters:
    - valley, crest: ObservationSeries
    - target: object with valley_sector and crest_sector (WindSector)
    - options: MixtureOptions

    Returns:
    - PosteriorSeries on the common 10-min grid
    """
    options = options or MixtureOptions()
    mask = precondition_mask(valley, crest, target.valley_sector, target.crest_sector)
    index = mask.index
    v = valley.data.loc[index]
    c = crest.data.loc[index]

    available = mask.notna().to_numpy()
    inside = mask.fillna(False).to_numpy(dtype=bool)
    p = np.full(len(index), np.nan)
    p[available] = 0.0

    params = None
    if inside.any():
        dh = crest.station.altitude - valley.station.altitude
        y = delta_theta(v["t"].to_numpy()[inside], c["t"].to_numpy()[inside], dh)
        X = np.column_stack([
            np.ones(int(inside.sum())),
            v["rh"].to_numpy()[inside],
            v["ff"].to_numpy()[inside],
        ])
        params = em_fit(y, X, min_sample=options.min_sample, tol=options.tol, max_iter=options.max_iter)
        p[inside] = posterior(y, X, params)
    else:
        logger.warning("no slot passes the precondition", extra={"fields": {"station": valley.station.id}})

    total = len(index)
    coverage = {
        "within_sector_pct": 100.0 * inside.sum() / total,
        "outside_sector_pct": 100.0 * (available & ~inside).sum() / total,
        "removed_pct": 100.0 * (~available).sum() / total,
    }
    logger.info("classified", extra={"fields": dict(station=valley.station.id, slots=total, **coverage)})
    return PosteriorSeries(
        p=pd.Series(p, index=index, name="p"),
        precondition=mask,
        params=params,
        coverage=coverage,
    )

"""
Module: learners.py
Responsibilities:
- Dataset construction with internal standardization
- L1-penalized logistic regression path (IRLS + coordinate descent) with
  stratified cross-validation
- Lasso-based stability selection with a final unregularized fit
- Gradient-boosted regression trees on the logistic loss, tuned by grid CV
- Constant climatology baseline
- One prediction contract and a versioned JSON schema for every model
"""
import itertools
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from utils.errors import ContractError, ConvergenceError, EstimationError, SchemaError
from utils.logger import get_logger

logger = get_logger(__name__)

SCHEMA_VERSION = 1
P_CLIP = 1e-12
W_MIN = 1e-5
ACCEPT_KKT = 1e-7
DEV_RATIO_MAX = 0.999
DEV_CHANGE_MIN = 1e-5
RIDGE_FALLBACK = 1e-6


# ---------------------------------------------------------------------------
# Data
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Standardizer:
    """Column names seen at fit time plus mean/sd of the kept columns."""
    names: tuple
    kept: tuple
    means: tuple
    sds: tuple

    @property
    def dropped(self):
        return tuple(n for n in self.names if n not in self.kept)

    def matrix(self, X_new):
        """Raw matrix in training column order; SchemaError on any mismatch."""
        if isinstance(X_new, pd.DataFrame):
            cols = [str(c) for c in X_new.columns]
            missing = sorted(set(self.names) - set(cols))
            extra = sorted(set(cols) - set(self.names))
            if missing or extra:
                raise SchemaError(f"column mismatch: missing {missing}, unexpected {extra}")
            return X_new[list(self.names)].to_numpy(dtype=float)
        X = np.atleast_2d(np.asarray(X_new, dtype=float))
        if X.shape[1] != len(self.names):
            raise SchemaError(f"expected {len(self.names)} columns, got {X.shape[1]}")
        return X

    def transform(self, X_new):
        X = self.matrix(X_new)
        idx = [self.names.index(n) for n in self.kept]
        return (X[:, idx] - np.asarray(self.means)) / np.asarray(self.sds)

    def to_dict(self):
        return {"names": list(self.names), "kept": list(self.kept),
                "means": list(self.means), "sds": list(self.sds)}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), tuple(d["kept"]), tuple(d["means"]), tuple(d["sds"]))


@dataclass(frozen=True)
class Dataset:
    """Standardized design X (kept columns only), binary y and the standardizer."""
    X: np.ndarray
    y: np.ndarray
    standardizer: Standardizer

    @property
    def names(self):
        return self.standardizer.kept

    @property
    def n(self):
        return len(self.y)


def make_dataset(X, y, names=None):
    """
    Builds a Dataset from raw covariates. Zero-variance columns are dropped
    and recorded; the others are z-scored (population sd).
    """
    if isinstance(X, pd.DataFrame):
        names = [str(c) for c in X.columns]
        X = X.to_numpy(dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if names is None:
        names = [f"x{j}" for j in range(X.shape[1])]
    names = tuple(names)
    if len(names) != X.shape[1] or len(set(names)) != len(names):
        raise ContractError("column names must be unique and match the columns of X")
    if X.shape[0] != len(y):
        raise ContractError(f"X has {X.shape[0]} rows, y has {len(y)}")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ContractError("dataset contains missing or non-finite values")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("labels must be 0 or 1")

    means = X.mean(axis=0)
    sds = X.std(axis=0)
    keep = sds > 1e-12 * np.maximum(1.0, np.abs(means))
    if not keep.all():
        logger.info("dropped zero-variance columns", extra={"fields": {"dropped": int((~keep).sum())}})
    standardizer = Standardizer(
        names=names,
        kept=tuple(n for n, k in zip(names, keep) if k),
        means=tuple(float(m) for m in means[keep]),
        sds=tuple(float(s) for s in sds[keep]),
    )
    Xs = (X[:, keep] - means[keep]) / sds[keep]
    return Dataset(X=Xs, y=y, standardizer=standardizer)


def _require_both_classes(y, minimum=1):
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if min(n_pos, n_neg) < minimum:
        raise EstimationError(
            f"need at least {minimum} observation(s) of each class, got {n_pos} positive / {n_neg} negative"
        )
    return n_pos, n_neg


def stratified_folds(y, k, rng):
    """Fold id per row; each class is spread evenly over the k folds."""
    ids = np.empty(len(y), dtype=int)
    offset = 0
    for cls in (1.0, 0.0):
        idx = rng.permutation(np.flatnonzero(y == cls))
        ids[idx] = (np.arange(len(idx)) + offset) % k
        offset = (offset + len(idx)) % k
    return ids


def deviance(p, y):
    """Per-row binomial deviance."""
    p = np.clip(p, P_CLIP, 1.0 - P_CLIP)
    return -2.0 * (y * np.log(p) + (1.0 - y) * np.log1p(-p))


def logloss(p, y):
    return float(np.mean(deviance(p, y)) / 2.0)


# ---------------------------------------------------------------------------
# Lasso
# ---------------------------------------------------------------------------

def soft_threshold(u, lam):
    return np.sign(u) * max(abs(u) - lam, 0.0)


def lambda_max(X, y):
    """Smallest lambda at which every slope is zero."""
    return float(np.max(np.abs(X.T @ (y - y.mean()))) / len(y))


def _objective(X, y, b0, beta, lam):
    eta = b0 + X @ beta
    return float(np.mean(np.logaddexp(0.0, eta) - y * eta) + lam * np.abs(beta).sum())


def _kkt_residual(X, y, p, beta, lam):
    """Largest violation of the optimality conditions (intercept included)."""
    n = len(y)
    g = X.T @ (y - p) / n
    res = abs(float(np.mean(y - p)))
    nz = beta != 0.0
    if nz.any():
        res = max(res, float(np.max(np.abs(g[nz] - lam * np.sign(beta[nz])))))
    if (~nz).any():
        res = max(res, float(np.max(np.abs(g[~nz]))) - lam)
    return res


def _coordinate_descent(H, c, lam, beta, max_sweeps=10000, tol=1e-24):
    """
    Minimizes 0.5 b'Hb - c'b + lam |b|_1 by cyclic coordinate descent on the
    covariance form; full sweeps alternate with sweeps over the nonzero set.
    """
    r = c - H @ beta
    diag = np.diag(H).tolist()
    k = len(beta)
    full = True
    for _ in range(max_sweeps):
        coords = range(k) if full else np.flatnonzero(beta).tolist()
        biggest = 0.0
        for j in coords:
            hjj = diag[j]
            if hjj <= 1e-14:
                continue
            old = beta[j]
            new = soft_threshold(r[j] + hjj * old, lam) / hjj
            d = new - old
            if d != 0.0:
                r -= H[:, j] * d
                beta[j] = new
                biggest = max(biggest, hjj * d * d)
        if biggest < tol:
            if full:
                break
            full = True
        else:
            full = False
    return beta


def _irls(X, y, lam, b0, beta, max_iter, tol):
    """Proximal-Newton (IRLS) iterations for one lambda on the columns of X."""
    n = len(y)
    F = _objective(X, y, b0, beta, lam)
    for _ in range(max_iter):
        eta = b0 + X @ beta
        p = expit(eta)
        if _kkt_residual(X, y, p, beta, lam) < tol:
            return b0, beta, True
        w = np.maximum(p * (1.0 - p), W_MIN)
        z = eta + (y - p) / w
        sw = w.sum()
        xbar = (w @ X) / sw
        zbar = float(w @ z) / sw
        Xc = X - xbar
        H = (Xc * w[:, None]).T @ Xc / n
        c = Xc.T @ (w * (z - zbar)) / n
        new_beta = _coordinate_descent(H, c, lam, beta.copy())
        new_b0 = zbar - float(xbar @ new_beta)

        t = 1.0
        while t > 1e-10:
            cand_b0 = b0 + t * (new_b0 - b0)
            cand_beta = beta + t * (new_beta - beta)
            cand_F = _objective(X, y, cand_b0, cand_beta, lam)
            if cand_F <= F + 1e-14 * max(1.0, abs(F)):
                break
            t *= 0.5
        else:
            break
        b0, beta, F = cand_b0, cand_beta, cand_F
    p = expit(b0 + X @ beta)
    return b0, beta, _kkt_residual(X, y, p, beta, lam) < tol


def solve_lambda(X, y, lam, b0, beta, strong=(), max_iter=100, tol=1e-8):
    """
    Solves the penalized problem at one lambda, warm-started at (b0, beta).
    Works on the strong set plus the current nonzeros, then adds every
    column violating the optimality check on the full gradient.
    """
    n, k = X.shape
    beta = np.array(beta, dtype=float)
    work = set(np.flatnonzero(beta).tolist()) | set(int(j) for j in strong)
    while True:
        S = np.array(sorted(work), dtype=int)
        if S.size:
            b0, sub, converged = _irls(X[:, S], y, lam, b0, beta[S].copy(), max_iter, tol)
            beta[:] = 0.0
            beta[S] = sub
        else:
            b0 = float(logit(np.clip(y.mean(), P_CLIP, 1 - P_CLIP)))
            converged = True
        p = expit(b0 + X @ beta)
        if not converged and _kkt_residual(X[:, S], y, p, beta[S], lam) >= ACCEPT_KKT:
            raise ConvergenceError(f"lasso did not converge at lambda={lam:.6g}", lam=lam)
        grad = X.T @ (y - p) / n
        outside = np.ones(k, dtype=bool)
        outside[S] = False
        violators = np.flatnonzero(outside & (np.abs(grad) > lam + tol))
        if violators.size == 0:
            return b0, beta, grad
        work |= set(violators.tolist())


@dataclass(frozen=True)
class LassoPath:
    lambdas: np.ndarray
    beta0: np.ndarray
    beta: np.ndarray  # (len(lambdas), k) on the standardized scale
    dev_ratio: np.ndarray


def lambda_grid(X, y, n_lambda=100, lambda_ratio=1e-4):
    lmax = lambda_max(X, y)
    return lmax * lambda_ratio ** (np.arange(n_lambda) / max(n_lambda - 1, 1))


def lasso_path(X, y, lambdas=None, n_lambda=100, lambda_ratio=1e-4, max_iter=100, tol=1e-8,
               max_entrants=None):
    """
    Warm-started coordinate descent over a decreasing lambda grid.

    The path stops early when the deviance ratio exceeds 0.999 or changes by
    less than 1e-5 (relative), and, when max_entrants is given, as soon as
    that many columns have been active at least once.
    """
    n, k = X.shape
    if lambdas is None:
        lambdas = lambda_grid(X, y, n_lambda, lambda_ratio)
    lambdas = np.asarray(lambdas, dtype=float)
    ybar = float(np.clip(y.mean(), P_CLIP, 1 - P_CLIP))
    null_dev = float(deviance(np.full(n, ybar), y).sum())

    b0 = float(logit(ybar))
    beta = np.zeros(k)
    grad = X.T @ (y - ybar) / n
    prev_lam = lambdas[0]
    ever = np.zeros(k, dtype=bool)
    out_b0, out_beta, out_dev = [], [], []
    for i, lam in enumerate(lambdas):
        strong = np.flatnonzero(np.abs(grad) >= 2.0 * lam - prev_lam)
        b0, beta, grad = solve_lambda(X, y, lam, b0, beta, strong, max_iter, tol)
        prev_lam = lam
        dev = float(deviance(expit(b0 + X @ beta), y).sum())
        ratio = 1.0 - dev / null_dev if null_dev > 0 else 1.0
        out_b0.append(b0)
        out_beta.append(beta.copy())
        out_dev.append(ratio)
        ever |= beta != 0.0
        if ratio > DEV_RATIO_MAX:
            break
        if i >= 5 and ratio - out_dev[-2] < DEV_CHANGE_MIN * ratio:
            break
        if max_entrants is not None and ever.sum() >= max_entrants:
            break
    m = len(out_b0)
    return LassoPath(lambdas[:m].copy(), np.array(out_b0), np.array(out_beta).reshape(m, k), np.array(out_dev))


@dataclass(frozen=True)
class LassoModel:
    beta0: float
    beta: tuple  # original scale, one per training column (dropped -> 0)
    lambda_grid: tuple
    cv_curve: tuple
    lambda_min: float
    standardizer: Standardizer
    beta_std: tuple = ()
    beta0_std: float = 0.0
    path: LassoPath = None
    kind: str = "lasso"

    def decision(self, X_new):
        Xs = self.standardizer.transform(X_new)
        return self.beta0_std + Xs @ np.asarray(self.beta_std, dtype=float).reshape(-1)


def _original_scale(standardizer, b0_std, beta_std):
    sds = np.asarray(standardizer.sds)
    means = np.asarray(standardizer.means)
    slopes = np.asarray(beta_std) / sds if len(sds) else np.zeros(0)
    b0 = float(b0_std - np.sum(slopes * means))
    full = dict(zip(standardizer.kept, slopes.tolist()))
    return b0, tuple(float(full.get(n, 0.0)) for n in standardizer.names)


def fit_lasso(data, folds=30, n_lambda=100, lambda_ratio=1e-4, seed=0, max_iter=100, tol=1e-8):
    """
    L1-penalized logistic regression with lambda chosen by stratified K-fold
    cross-validation (minimum mean held-out deviance).

    Parameters:
    - data: Dataset
    - folds: number of CV folds (reduced to the minority class count)
    - n_lambda, lambda_ratio: log-spaced grid from lambda_max down
    - seed: fold assignment seed

    Returns:
    - LassoModel at lambda_min
    """
    X, y = data.X, data.y
    n_pos, n_neg = _require_both_classes(y, minimum=2)
    n, k = X.shape
    if k == 0:
        path = LassoPath(np.array([0.0]), np.array([float(logit(y.mean()))]), np.zeros((1, 0)), np.zeros(1))
        cv_curve = np.array([float(deviance(np.full(n, y.mean()), y).mean())])
    else:
        path = lasso_path(X, y, n_lambda=n_lambda, lambda_ratio=lambda_ratio, max_iter=max_iter, tol=tol)
        k_folds = min(folds, n_pos, n_neg)
        if k_folds < folds:
            logger.warning("reduced lasso CV folds to the minority class count",
                           extra={"fields": {"folds": k_folds, "positives": n_pos}})
        ids = stratified_folds(y, k_folds, np.random.default_rng(seed))
        totals = None
        for f in range(k_folds):
            train, test = ids != f, ids == f
            fold_path = lasso_path(X[train], y[train], lambdas=path.lambdas, max_iter=max_iter, tol=tol)
            eta = fold_path.beta0[:, None] + fold_path.beta @ X[test].T
            dev = deviance(expit(eta), y[test][None, :]).sum(axis=1)
            totals = dev if totals is None else totals[:len(dev)] + dev[:len(totals)]
        cv_curve = totals / n
        if len(cv_curve) < n_lambda:
            logger.info("lasso lambda grid truncated", extra={"fields": {
                "n_lambda": n_lambda, "full_path": len(path.lambdas), "grid_points": len(cv_curve),
            }})
    best = int(np.argmin(cv_curve))
    b0_std = float(path.beta0[best])
    beta_std = path.beta[best].copy()
    b0, beta = _original_scale(data.standardizer, b0_std, beta_std)
    logger.info("lasso fitted", extra={"fields": {
        "lambda_min": float(path.lambdas[best]), "active": int(np.count_nonzero(beta_std)),
        "path_length": len(path.lambdas), "grid_points": len(cv_curve),
    }})
    return LassoModel(
        beta0=b0, beta=beta,
        lambda_grid=tuple(float(v) for v in path.lambdas[:len(cv_curve)]),
        cv_curve=tuple(float(v) for v in cv_curve),
        lambda_min=float(path.lambdas[best]),
        standardizer=data.standardizer,
        beta_std=tuple(float(v) for v in beta_std),
        beta0_std=b0_std,
        path=path,
    )


# ---------------------------------------------------------------------------
# Stability selection
# ---------------------------------------------------------------------------

def first_entrants(beta_path, K):
    """
    Columns in order of first activation along a path; columns activating at
    the same step are ordered by column index. The first K entrants are
    returned together with every column entering at the same step as the
    K-th one, so ties can push the result past K columns.
    """
    active = beta_path != 0.0
    ever = active.any(axis=0)
    first = np.where(ever, active.argmax(axis=0), np.iinfo(np.int64).max)
    cols = np.flatnonzero(ever)
    order = cols[np.lexsort((cols, first[cols]))]
    if K <= 0:
        return order[:0]
    if len(order) <= K:
        return order
    cutoff = first[order[K - 1]]
    return order[first[order] <= cutoff]


def logistic_newton(X, y, ridge=0.0, max_iter=50, tol=1e-10):
    """
    Logistic regression with intercept by Newton's method; ridge penalizes
    slopes only. Returns (b0, beta, converged).
    """
    n = len(y)
    Z = np.column_stack([np.ones(n), X])
    theta = np.zeros(Z.shape[1])
    theta[0] = float(logit(np.clip(y.mean(), P_CLIP, 1 - P_CLIP)))
    penalty = np.full(Z.shape[1], ridge)
    penalty[0] = 0.0

    def objective(th):
        eta = Z @ th
        return float(np.sum(y * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(penalty * th * th))

    current = objective(theta)
    for _ in range(max_iter):
        p = expit(Z @ theta)
        grad = Z.T @ (y - p) - penalty * theta
        hess = (Z * (p * (1 - p))[:, None]).T @ Z + np.diag(penalty)
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            return theta[0], theta[1:], False
        if not np.all(np.isfinite(step)):
            return theta[0], theta[1:], False
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            value = objective(cand)
            if value >= current:
                break
            t *= 0.5
        else:
            break
        theta, current = cand, value
        if np.max(np.abs(t * step)) < tol:
            return theta[0], theta[1:], True
    return theta[0], theta[1:], False


@dataclass(frozen=True)
class StabselModel:
    selection_freq: tuple  # per kept column
    selected: tuple  # column names
    final_b0: float
    final_coefs: tuple  # standardized scale, one per selected column
    standardizer: Standardizer
    threshold: float = 0.6
    runs: int = 200
    first_k: int = 40
    separation: bool = False
    kind: str = "stabsel"

    def decision(self, X_new):
        Xs = self.standardizer.transform(X_new)
        idx = [self.standardizer.kept.index(n) for n in self.selected]
        return self.final_b0 + Xs[:, idx] @ np.asarray(self.final_coefs, dtype=float).reshape(-1)


def fit_stabsel(data, runs=200, first_k=40, threshold=0.6, seed=0, n_lambda=100, lambda_ratio=1e-4,
                max_iter=100, tol=1e-8):
    """
    Stability selection: runs lasso paths on class-stratified half-samples,
    counts how often each column is among the first K entrants, and refits
    an unregularized logistic regression on columns with frequency above
    the threshold.
    """
    X, y = data.X, data.y
    _require_both_classes(y, minimum=2)
    n, k = X.shape
    rng = np.random.default_rng(seed)
    pos = np.flatnonzero(y == 1.0)
    neg = np.flatnonzero(y == 0.0)
    counts = np.zeros(k)
    for _ in range(runs):
        rows = np.sort(np.concatenate([
            rng.choice(pos, len(pos) // 2, replace=False),
            rng.choice(neg, len(neg) // 2, replace=False),
        ]))
        if k == 0:
            continue
        path = lasso_path(X[rows], y[rows], n_lambda=n_lambda, lambda_ratio=lambda_ratio,
                          max_iter=max_iter, tol=tol, max_entrants=first_k)
        counts[first_entrants(path.beta, first_k)] += 1
    freq = counts / runs
    sel_idx = np.flatnonzero(freq > threshold)

    separation = False
    if sel_idx.size:
        b0, coefs, converged = logistic_newton(X[:, sel_idx], y)
        if not converged or np.max(np.abs(coefs)) > 1e4:
            separation = True
            logger.warning("final stability-selection fit separated; using ridge fallback",
                           extra={"fields": {"ridge": RIDGE_FALLBACK, "selected": int(sel_idx.size)}})
            b0, coefs, _ = logistic_newton(X[:, sel_idx], y, ridge=RIDGE_FALLBACK, max_iter=200)
    else:
        b0, coefs = float(logit(np.clip(y.mean(), P_CLIP, 1 - P_CLIP))), np.zeros(0)
    logger.info("stability selection fitted", extra={"fields": {
        "runs": runs, "selected": int(sel_idx.size), "max_freq": float(freq.max()) if k else 0.0,
    }})
    return StabselModel(
        selection_freq=tuple(float(v) for v in freq),
        selected=tuple(data.names[j] for j in sel_idx),
        final_b0=float(b0),
        final_coefs=tuple(float(v) for v in coefs),
        standardizer=data.standardizer,
        threshold=threshold, runs=runs, first_k=first_k, separation=separation,
    )


# ---------------------------------------------------------------------------
# Gradient-boosted trees
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Tree:
    """Array-backed regression tree; feature -1 marks a leaf."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    gain: np.ndarray
    depth: int = 0

    @property
    def n_splits(self):
        return int(np.count_nonzero(self.feature >= 0))

    def leaves(self):
        return np.flatnonzero(self.feature < 0)

    def predict(self, X):
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            inner = np.flatnonzero(f >= 0)
            if inner.size == 0:
                return self.value[node]
            at = node[inner]
            go_left = X[inner, f[inner]] <= self.threshold[at]
            node[inner] = np.where(go_left, self.left[at], self.right[at])


def _best_split(X, g, h, rows, reg_lambda, gamma, min_child_weight):
    if len(rows) < 2 or X.shape[1] == 0:
        return None
    Xn = X[rows]
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    gs = g[rows][order]
    hs = h[rows][order]
    G = float(g[rows].sum())
    H = float(h[rows].sum())
    GL = np.cumsum(gs, axis=0)[:-1]
    HL = np.cumsum(hs, axis=0)[:-1]
    GR = G - GL
    HR = H - HL
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = 0.5 * (GL ** 2 / (HL + reg_lambda) + GR ** 2 / (HR + reg_lambda) - G ** 2 / (H + reg_lambda))
    ok = (xs[1:] > xs[:-1]) & (HL >= min_child_weight) & (HR >= min_child_weight)
    gain = np.where(ok, gain, -np.inf)
    by_feature = gain.T  # feature-major: ties go to the lower feature, then lower threshold
    flat = int(np.argmax(by_feature))
    j, i = divmod(flat, by_feature.shape[1])
    best = float(by_feature[j, i])
    if not best - gamma > 0.0:
        return None
    lo, hi = xs[i, j], xs[i + 1, j]
    threshold = lo + 0.5 * (hi - lo)
    if threshold >= hi:
        threshold = lo
    return j, float(threshold), best


def build_tree(X, g, h, max_depth, min_child_weight, gamma, reg_lambda=1.0, rows=None):
    """
    Exact greedy tree on gradients g and hessians h. A split is made only if
    its gain exceeds gamma and both children keep a hessian sum of at least
    min_child_weight. Leaf values are -G/(H + reg_lambda).
    """
    rows = np.arange(len(g)) if rows is None else np.asarray(rows)
    feature, threshold, left, right, value, cover, gain = [], [], [], [], [], [], []
    stack = [(rows, 0, None, None)]
    max_seen = 0
    while stack:
        node_rows, depth, parent, side = stack.pop()
        node = len(feature)
        if parent is not None:
            (left if side == "L" else right)[parent] = node
        G = float(g[node_rows].sum())
        H = float(h[node_rows].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(-G / (H + reg_lambda))
        cover.append(H)
        gain.append(0.0)
        max_seen = max(max_seen, depth)
        if depth >= max_depth:
            continue
        split = _best_split(X, g, h, node_rows, reg_lambda, gamma, min_child_weight)
        if split is None:
            continue
        j, thr, split_gain = split
        feature[node] = j
        threshold[node] = thr
        gain[node] = split_gain
        mask = X[node_rows, j] <= thr
        # right pushed first so the left child gets the lower node id
        stack.append((node_rows[~mask], depth + 1, node, "R"))
        stack.append((node_rows[mask], depth + 1, node, "L"))
    return Tree(
        feature=np.array(feature, dtype=int), threshold=np.array(threshold),
        left=np.array(left, dtype=int), right=np.array(right, dtype=int),
        value=np.array(value), cover=np.array(cover), gain=np.array(gain), depth=max_seen,
    )


def boost(X, y, eta, max_depth, min_child_weight, gamma, nrounds, subsample=0.5, reg_lambda=1.0,
          rng=None, X_eval=None):
    """
    Boosts nrounds trees on the logistic loss.

    Returns:
    - (base_score, trees, eval_margins) where eval_margins[r] is the margin
      on X_eval after r+1 rounds (None without X_eval). An empty tree list
      means no split was possible in the first round.
    """
    rng = rng or np.random.default_rng(0)
    n = len(y)
    base_score = float(logit(np.clip(y.mean(), P_CLIP, 1 - P_CLIP)))
    margin = np.full(n, base_score)
    eval_margin = None if X_eval is None else np.full(len(X_eval), base_score)
    trees, history = [], []
    size = int(round(n * subsample))
    for r in range(nrounds):
        p = expit(margin)
        g = p - y
        h = p * (1.0 - p)
        rows = np.arange(n) if subsample >= 1.0 else np.sort(rng.choice(n, size, replace=False))
        tree = build_tree(X, g, h, max_depth, min_child_weight, gamma, reg_lambda, rows)
        if r == 0 and tree.n_splits == 0:
            logger.info("no split possible in the first round; model is the base rate")
            if X_eval is not None:
                history = [eval_margin.copy() for _ in range(nrounds)]
            break
        trees.append(tree)
        margin = margin + eta * tree.predict(X)
        if X_eval is not None:
            eval_margin = eval_margin + eta * tree.predict(X_eval)
            history.append(eval_margin.copy())
    return base_score, trees, (np.array(history) if X_eval is not None else None)


def gbt_grid(options=None):
    """Every (eta, max_depth, min_child_weight, gamma) combination, in product order."""
    eta = getattr(options, "eta", (0.1, 0.125, 0.15, 0.2))
    depth = getattr(options, "max_depth", (5, 10, 20))
    mcw = getattr(options, "min_child_weight", (2.0, 4.0, 6.0))
    gamma = getattr(options, "gamma", (2.0, 5.0, 10.0))
    return [
        {"eta": float(e), "max_depth": int(d), "min_child_weight": float(m), "gamma": float(g)}
        for e, d, m, g in itertools.product(eta, depth, mcw, gamma)
    ]


@dataclass(frozen=True)
class GbtModel:
    trees: tuple
    params: dict
    base_score: float
    standardizer: Standardizer
    nrounds: int = 0
    cv_logloss: float = float("nan")
    base_only: bool = False
    kind: str = "gbt"

    def decision(self, X_new):
        Xs = self.standardizer.transform(X_new)
        margin = np.full(len(Xs), self.base_score)
        for tree in self.trees:
            margin = margin + self.params["eta"] * tree.predict(Xs)
        return margin


def fit_gbt(data, grid=None, cv_folds=10, seed=0, nrounds=20, subsample=0.5, reg_lambda=1.0):
    """
    Gradient-boosted trees tuned by stratified K-fold CV over the parameter
    grid; (params, rounds) minimizing the mean per-fold held-out logloss are refit
    on all rows.

    Parameters:
    - data: Dataset
    - grid: list of param dicts (default gbt_grid(), 108 combinations)
    - cv_folds: folds (reduced to the minority class count)
    - seed: drives fold assignment and row subsampling
    """
    X, y = data.X, data.y
    n_pos, n_neg = _require_both_classes(y, minimum=2)
    grid = grid if grid is not None else gbt_grid()
    k_folds = min(cv_folds, n_pos, n_neg)
    ids = stratified_folds(y, k_folds, np.random.default_rng(seed))

    best = (np.inf, 0, 1)
    for ci, params in enumerate(grid):
        fold_losses = np.zeros((nrounds, k_folds))
        for f in range(k_folds):
            train, test = ids != f, ids == f
            _, _, history = boost(
                X[train], y[train], params["eta"], params["max_depth"], params["min_child_weight"],
                params["gamma"], nrounds, subsample, reg_lambda,
                rng=np.random.default_rng([seed, ci, f]), X_eval=X[test],
            )
            fold_losses[:, f] = [logloss(expit(history[r]), y[test]) for r in range(nrounds)]
        losses = fold_losses.mean(axis=1)
        r = int(np.argmin(losses))
        if losses[r] < best[0]:
            best = (float(losses[r]), ci, r + 1)

    loss, ci, rounds = best
    params = dict(grid[ci])
    base_score, trees, _ = boost(
        X, y, params["eta"], params["max_depth"], params["min_child_weight"], params["gamma"],
        rounds, subsample, reg_lambda, rng=np.random.default_rng([seed, len(grid)]),
    )
    params.update({"subsample": subsample, "reg_lambda": reg_lambda})
    logger.info("gbt fitted", extra={"fields": dict(cv_logloss=loss, rounds=rounds, trees=len(trees), **params)})
    return GbtModel(
        trees=tuple(trees), params=params, base_score=base_score, standardizer=data.standardizer,
        nrounds=rounds, cv_logloss=float(loss), base_only=not trees,
    )


# ---------------------------------------------------------------------------
# Climatology baseline
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClimatologyModel:
    rate: float
    standardizer: Standardizer
    kind: str = "climatology"

    def decision(self, X_new):
        Xs = self.standardizer.matrix(X_new)
        return np.full(len(Xs), float(logit(np.clip(self.rate, P_CLIP, 1 - P_CLIP))))


def fit_climatology(data):
    """Constant base-rate model."""
    return ClimatologyModel(rate=float(np.mean(data.y)), standardizer=data.standardizer)


# ---------------------------------------------------------------------------
# Common contract
# ---------------------------------------------------------------------------

def predict(model, X_new):
    """
    Probabilities in (0, 1) for new rows. X_new must carry exactly the
    training columns (DataFrame, any order) or be a matrix in training order.
    """
    return np.clip(expit(model.decision(X_new)), P_CLIP, 1.0 - P_CLIP)


def fit_learner(name, data, config, seed):
    """Dispatches to the learner named in the config with its options."""
    if name == "lasso":
        o = config.lasso
        return fit_lasso(data, folds=o.folds, n_lambda=o.n_lambda, lambda_ratio=o.lambda_ratio,
                         seed=seed, max_iter=o.max_iter, tol=o.tol)
    if name == "stabsel":
        s, o = config.stabsel, config.lasso
        return fit_stabsel(data, runs=s.runs, first_k=s.first_k, threshold=s.threshold, seed=seed,
                           n_lambda=o.n_lambda, lambda_ratio=o.lambda_ratio, max_iter=o.max_iter, tol=o.tol)
    if name == "gbt":
        o = config.gbt
        return fit_gbt(data, grid=gbt_grid(o), cv_folds=o.folds, seed=seed, nrounds=o.nrounds,
                       subsample=o.subsample, reg_lambda=o.reg_lambda)
    if name == "climatology":
        return fit_climatology(data)
    raise ContractError(f"unknown learner {name!r}")


def _tree_to_dict(tree, names, node=0):
    if tree.feature[node] < 0:
        return {"leaf": float(tree.value[node]), "cover": float(tree.cover[node])}
    return {
        "feature": names[tree.feature[node]],
        "threshold": float(tree.threshold[node]),
        "gain": float(tree.gain[node]),
        "cover": float(tree.cover[node]),
        "left": _tree_to_dict(tree, names, tree.left[node]),
        "right": _tree_to_dict(tree, names, tree.right[node]),
    }


def _tree_from_dict(record, names):
    cols = {"feature": [], "threshold": [], "left": [], "right": [], "value": [], "cover": [], "gain": []}
    depth = 0
    stack = [(record, None, None, 0)]
    while stack:
        rec, parent, side, d = stack.pop()
        node = len(cols["feature"])
        depth = max(depth, d)
        if parent is not None:
            cols[side][parent] = node
        leaf = "leaf" in rec
        cols["feature"].append(-1 if leaf else names.index(rec["feature"]))
        cols["threshold"].append(0.0 if leaf else rec["threshold"])
        cols["left"].append(-1)
        cols["right"].append(-1)
        cols["value"].append(rec["leaf"] if leaf else 0.0)
        cols["cover"].append(rec.get("cover", 0.0))
        cols["gain"].append(0.0 if leaf else rec.get("gain", 0.0))
        if not leaf:
            stack.append((rec["right"], node, "right", d + 1))
            stack.append((rec["left"], node, "left", d + 1))
    return Tree(
        feature=np.array(cols["feature"], dtype=int), threshold=np.array(cols["threshold"], dtype=float),
        left=np.array(cols["left"], dtype=int), right=np.array(cols["right"], dtype=int),
        value=np.array(cols["value"], dtype=float), cover=np.array(cols["cover"], dtype=float),
        gain=np.array(cols["gain"], dtype=float), depth=depth,
    )


def model_to_dict(model):
    """Versioned JSON-ready record of any fitted model."""
    out = {"schema_version": SCHEMA_VERSION, "learner": model.kind,
           "standardizer": model.standardizer.to_dict()}
    if model.kind == "lasso":
        out.update({
            "beta0": model.beta0, "beta": list(model.beta),
            "beta0_std": model.beta0_std, "beta_std": list(model.beta_std),
            "lambda_grid": list(model.lambda_grid), "cv_curve": list(model.cv_curve),
            "lambda_min": model.lambda_min,
        })
    elif model.kind == "stabsel":
        out.update({
            "selection_freq": list(model.selection_freq), "selected": list(model.selected),
            "final_b0": model.final_b0, "final_coefs": list(model.final_coefs),
            "threshold": model.threshold, "runs": model.runs, "first_k": model.first_k,
            "separation": model.separation,
        })
    elif model.kind == "gbt":
        kept = list(model.standardizer.kept)
        out.update({
            "params": model.params, "base_score": model.base_score, "nrounds": model.nrounds,
            "cv_logloss": model.cv_logloss if np.isfinite(model.cv_logloss) else None,
            "base_only": model.base_only,
            "trees": [_tree_to_dict(t, kept) for t in model.trees],
        })
    elif model.kind == "climatology":
        out["rate"] = model.rate
    else:
        raise ContractError(f"unknown model kind {model.kind!r}")
    return out


def model_from_dict(d):
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaError(f"unsupported model schema version {version!r}")
    std = Standardizer.from_dict(d["standardizer"])
    kind = d.get("learner")
    if kind == "lasso":
        return LassoModel(
            beta0=d["beta0"], beta=tuple(d["beta"]), lambda_grid=tuple(d["lambda_grid"]),
            cv_curve=tuple(d["cv_curve"]), lambda_min=d["lambda_min"], standardizer=std,
            beta_std=tuple(d["beta_std"]), beta0_std=d["beta0_std"],
        )
    if kind == "stabsel":
        return StabselModel(
            selection_freq=tuple(d["selection_freq"]), selected=tuple(d["selected"]),
            final_b0=d["final_b0"], final_coefs=tuple(d["final_coefs"]), standardizer=std,
            threshold=d["threshold"], runs=d["runs"], first_k=d["first_k"], separation=d["separation"],
        )
    if kind == "gbt":
        kept = list(std.kept)
        cv = d.get("cv_logloss")
        return GbtModel(
            trees=tuple(_tree_from_dict(t, kept) for t in d["trees"]), params=dict(d["params"]),
            base_score=d["base_score"], standardizer=std, nrounds=d["nrounds"],
            cv_logloss=float("nan") if cv is None else cv, base_only=d["base_only"],
        )
    if kind == "climatology":
        return ClimatologyModel(rate=d["rate"], standardizer=std)
    raise SchemaError(f"unknown learner {kind!r} in model record")

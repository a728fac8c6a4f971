"""
Module: evaluate.py
Responsibilities:
- Blocked two-year cross-validation folds over a twelve-year period
- The model layout: one job per station x hour-of-day x learner x variable set
- Brier score and thresholded event metrics (FNR / FPR / PC)
- Cross-validated and in-sample scoring, fanned out over a thread pool
- Plain-text model-comparison table
"""
import concurrent.futures
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from utils.config import derive_seed
from utils.errors import ConfigError, ContractError, FoehnError
from utils.file_handler import frame_to_csv
from utils.learners import fit_learner, make_dataset, predict
from utils.logger import get_logger

logger = get_logger(__name__)

BLOCK_YEARS = 2
N_FOLDS = 6
REPORT_COLUMNS = ["station", "learner", "set", "fold", "split", "brier", "fnr", "fpr", "pc", "n"]
POOLED = "pooled"
INSAMPLE = "insample"

# Values published for the real stations; synthetic runs are not expected to match them.
REFERENCE_TARGETS = {
    "brier_test": {"lasso": 0.0261, "stabsel": 0.0276, "gbt": 0.0283},
    "event_metrics": {"station": "Altdorf", "fnr": 15.7, "fpr": 0.4, "pc": 98.8},
    "foehn_hours_per_year": {"station": "Altdorf", "hours": 482.4},
}


@dataclass(frozen=True)
class Fold:
    number: int
    test_years: tuple
    train_years: tuple
    infeasible_for: tuple = ()


@dataclass(frozen=True)
class FoldPlan:
    period: tuple
    folds: tuple

    def feasible(self, station):
        return [f for f in self.folds if station not in f.infeasible_for]


@dataclass(frozen=True, order=True)
class Job:
    station: str
    hour: int
    learner: str
    variable_set: str


@dataclass(frozen=True)
class StationData:
    """Hourly labels (1/0/NaN) and the feature frames per variable set of one station."""
    station: str
    labels: pd.Series
    features: dict

    def rows(self, variable_set, hour=None, years=None):
        """(X, y) for labeled hours that also have features, optionally filtered."""
        frame = self.features[variable_set]
        labeled = self.labels.dropna()
        index = labeled.index.intersection(frame.index)
        if hour is not None:
            index = index[index.hour == hour]
        if years is not None:
            index = index[np.isin(index.year, list(years))]
        return frame.loc[index], labeled.loc[index].to_numpy(dtype=float)


@dataclass(frozen=True)
class ScoreReport:
    mode: str  # "cv" or "insample"
    scores: pd.DataFrame
    skipped: pd.DataFrame = field(default_factory=pd.DataFrame)

    def select(self, **criteria):
        df = self.scores
        for key, value in criteria.items():
            df = df[df[key] == value]
        return df


def _labels_of(labels):
    if isinstance(labels, dict):
        return {k: getattr(v, "label", v) for k, v in labels.items()}
    return {"": getattr(labels, "label", labels)}


def make_folds(period, labels, block_years=BLOCK_YEARS):
    """
    Six folds of block_years consecutive test years each (two by default).

    Parameters:
    - period: (first_year, last_year), six blocks long
    - labels: hourly label series, or a mapping station -> series
    - block_years: test years per fold

    Returns:
    - FoldPlan; a fold is infeasible for a station with no labeled hour in
      its test years
    """
    start, end = int(period[0]), int(period[1])
    years = list(range(start, end + 1))
    block = int(block_years)
    if block < 1:
        raise ConfigError(f"cv block_years must be at least 1, got {block_years}")
    if len(years) != block * N_FOLDS:
        raise ConfigError(
            f"CV period {start}-{end} has {len(years)} years; need {block * N_FOLDS} "
            f"for {N_FOLDS} blocks of {block}"
        )
    series = _labels_of(labels)
    folds = []
    for i in range(N_FOLDS):
        test = tuple(years[i * block:(i + 1) * block])
        train = tuple(y for y in years if y not in test)
        infeasible = []
        for station, s in sorted(series.items()):
            labeled = s.dropna()
            if not np.isin(labeled.index.year, test).any():
                infeasible.append(station)
        if infeasible:
            logger.warning("fold infeasible", extra={"fields": {
                "fold": i + 1, "test_years": f"{test[0]}-{test[-1]}", "stations": ",".join(infeasible),
            }})
        folds.append(Fold(i + 1, test, train, tuple(infeasible)))
    return FoldPlan(period=(start, end), folds=tuple(folds))


def train_layout(stations, hours, learners, variable_sets):
    """One job per (station, hour-of-day, learner, variable set), sorted."""
    return sorted(Job(s, int(h), l, v) for s in stations for h in hours for l in learners for v in variable_sets)


def brier(p, o):
    p = np.asarray(p, dtype=float)
    o = np.asarray(o, dtype=float)
    if p.shape != o.shape:
        raise ContractError(f"forecasts ({p.size}) and outcomes ({o.size}) differ in length")
    if p.size == 0:
        raise ContractError("brier score of an empty sample")
    return float(np.mean((p - o) ** 2))


def confusion(p, o, threshold=0.5):
    forecast = np.asarray(p, dtype=float) >= threshold
    observed = np.asarray(o, dtype=float) == 1.0
    return {
        "tp": int(np.sum(forecast & observed)),
        "fn": int(np.sum(~forecast & observed)),
        "fp": int(np.sum(forecast & ~observed)),
        "tn": int(np.sum(~forecast & ~observed)),
    }


def metrics_from_confusion(tp, fn, fp, tn):
    """(fnr, fpr, pc) in percent; a rate without a denominator is NaN."""
    n = tp + fn + fp + tn
    fnr = 100.0 * fn / (fn + tp) if fn + tp else float("nan")
    fpr = 100.0 * fp / (fp + tn) if fp + tn else float("nan")
    pc = 100.0 * (tp + tn) / n if n else float("nan")
    return fnr, fpr, pc


def event_metrics(p, o, threshold=0.5):
    """
    FNR, FPR and PC (percent) from the confusion matrix at the threshold.
    FNR is NaN when there are no positive outcomes.
    """
    if len(p) == 0:
        raise ContractError("event metrics of an empty sample")
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")
    return metrics_from_confusion(**confusion(p, o, threshold))


def score(p, o, threshold=0.5):
    counts = confusion(p, o, threshold)
    fnr, fpr, pc = metrics_from_confusion(**counts)
    return dict(brier=brier(p, o), fnr=fnr, fpr=fpr, pc=pc, n=len(p), **counts)


def _fit_predict(unit, data, config):
    """Fits one job on its training rows and predicts train and test rows."""
    job, fold_no, train_years, test_years = unit
    station = data[job.station]
    X_train, y_train = station.rows(job.variable_set, job.hour, train_years)
    if len(y_train) == 0:
        raise ContractError("empty training set")
    seed = derive_seed(config.seed, job.station, job.hour, job.learner, job.variable_set, fold_no)
    model = fit_learner(job.learner, make_dataset(X_train, y_train), config, seed)
    out = {"train": (X_train.index, predict(model, X_train), y_train)}
    if test_years is not None:
        X_test, y_test = station.rows(job.variable_set, job.hour, test_years)
        if len(y_test):
            out["test"] = (X_test.index, predict(model, X_test), y_test)
    return model, out


def _run_units(units, data, config, n_jobs):
    """Runs (job, fold, train_years, test_years) units; failures are collected, not raised."""
    results, skipped = {}, []
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, int(n_jobs))) as executor:
        future_to_unit = {executor.submit(_fit_predict, u, data, config): u for u in units}
        for future in concurrent.futures.as_completed(future_to_unit):
            unit = future_to_unit[future]
            job, fold_no = unit[0], unit[1]
            try:
                results[(job, fold_no)] = future.result()
            except (FoehnError, ValueError, np.linalg.LinAlgError) as exc:
                logger.warning("job skipped", extra={"fields": {
                    "station": job.station, "hour": job.hour, "learner": job.learner,
                    "set": job.variable_set, "fold": fold_no, "reason": str(exc),
                }})
                skipped.append({
                    "station": job.station, "hour": job.hour, "learner": job.learner,
                    "set": job.variable_set, "fold": fold_no, "reason": str(exc),
                })
    skipped_df = pd.DataFrame(skipped, columns=["station", "hour", "learner", "set", "fold", "reason"])
    return results, skipped_df.sort_values(["station", "learner", "set", "fold", "hour"]).reset_index(drop=True)


def _pool(results, threshold):
    """Pools predictions over hours per (station, learner, set, fold, split) and scores them."""
    pooled = {}
    for (job, fold_no), (_, out) in sorted(results.items(), key=lambda kv: (kv[0][0], str(kv[0][1]))):
        for split, (_, p, o) in out.items():
            key = (job.station, job.learner, job.variable_set, str(fold_no), split)
            pooled.setdefault(key, ([], []))
            pooled[key][0].append(p)
            pooled[key][1].append(o)
    rows = []
    for key in sorted(pooled):
        p = np.concatenate(pooled[key][0])
        o = np.concatenate(pooled[key][1])
        station, learner, vset, fold, split = key
        rows.append(dict(station=station, learner=learner, set=vset, fold=fold, split=split,
                         **score(p, o, threshold)))
    return rows, pooled


def run_cv(plan, jobs, data, config, n_jobs=1):
    """
    Blocked cross-validation: for every job and feasible fold, fit on the
    training years and score train and test hours. Scores are computed on
    predictions pooled over the hour-of-day models, per fold and over all
    folds (fold 'pooled').

    Parameters:
    - plan: FoldPlan
    - jobs: Job list (train_layout)
    - data: mapping station -> StationData
    - config: PipelineConfig (seed, learner options, event threshold)
    - n_jobs: worker threads
    """
    units = [(job, fold.number, fold.train_years, fold.test_years)
             for job in jobs for fold in plan.feasible(job.station)]
    logger.info("cross-validation started", extra={"fields": {"jobs": len(jobs), "units": len(units)}})
    results, skipped = _run_units(units, data, config, n_jobs)
    threshold = config.cv.threshold
    rows, pooled = _pool(results, threshold)

    over_folds = {}
    for (station, learner, vset, _, split), (ps, os_) in pooled.items():
        entry = over_folds.setdefault((station, learner, vset, POOLED, split), ([], []))
        entry[0].extend(ps)
        entry[1].extend(os_)
    for key in sorted(over_folds):
        station, learner, vset, fold, split = key
        p = np.concatenate(over_folds[key][0])
        o = np.concatenate(over_folds[key][1])
        rows.append(dict(station=station, learner=learner, set=vset, fold=fold, split=split,
                         **score(p, o, threshold)))
    return ScoreReport(mode="cv", scores=_frame(rows), skipped=skipped)


def fit_jobs(jobs, data, config, years=None, n_jobs=1):
    """
    Fits every job on all its labeled hours (restricted to years when given).

    Returns: ({Job: model}, skipped DataFrame, raw predictions per job)
    """
    units = [(job, INSAMPLE, years, None) for job in jobs]
    results, skipped = _run_units(units, data, config, n_jobs)
    models = {job: model for (job, _), (model, _) in results.items()}
    return models, skipped, results


def run_insample(jobs, data, config, n_jobs=1):
    """Fits on the whole period and scores on the same hours."""
    years = range(config.cv.start_year, config.cv.end_year + 1)
    models, skipped, results = fit_jobs(jobs, data, config, years=years, n_jobs=n_jobs)
    rows, _ = _pool(results, config.cv.threshold)
    return ScoreReport(mode="insample", scores=_frame(rows), skipped=skipped), models


def _frame(rows):
    columns = REPORT_COLUMNS + ["tp", "fn", "fp", "tn"]
    df = pd.DataFrame(rows, columns=columns)
    return df.sort_values(["station", "learner", "set", "fold", "split"]).reset_index(drop=True)


def report_to_csv(report):
    """Report CSV: station,learner,set,fold,split,brier,fnr,fpr,pc,n."""
    return frame_to_csv(report.scores[REPORT_COLUMNS])


def _fmt(value, digits):
    return "  -  " if value is None or not np.isfinite(value) else f"{value:.{digits}f}"


def summary_table(report):
    """
    Plain-text comparison: one line per station, variable set and learner
    with Brier, FNR, FPR and PC. CV reports use the test split pooled over
    folds; in-sample reports use the training split.
    """
    if report.mode == "cv":
        df = report.select(fold=POOLED, split="test")
        title = "Model comparison (cross-validated, test hours pooled over folds)"
    else:
        df = report.select(split="train")
        title = "Model comparison (in-sample over the whole period)"
    lines = [title, "", f"{'station':<10}{'set':<8}{'learner':<12}{'brier':>8}{'fnr':>8}{'fpr':>8}{'pc':>8}{'n':>9}"]
    for _, row in df.sort_values(["station", "set", "learner"]).iterrows():
        lines.append(
            f"{row['station']:<10}{row['set']:<8}{row['learner']:<12}"
            f"{_fmt(row['brier'], 4):>8}{_fmt(row['fnr'], 1):>8}{_fmt(row['fpr'], 1):>8}"
            f"{_fmt(row['pc'], 1):>8}{int(row['n']):>9}"
        )
    if not df.empty:
        lines.append("")
        lines.append("Mean Brier per learner and set:")
        means = df.groupby(["set", "learner"])["brier"].mean()
        for (vset, learner), value in means.items():
            lines.append(f"  {vset:<8}{learner:<12}{value:.4f}")
    if not report.skipped.empty:
        lines.append("")
        lines.append(f"Skipped jobs: {len(report.skipped)}")
    ref = REFERENCE_TARGETS
    lines += [
        "",
        "Reference targets (real stations; not expected from synthetic data):",
        "  mean test Brier: " + ", ".join(f"{k} {v:.4f}" for k, v in ref["brier_test"].items()),
        "  {station} FNR/FPR/PC: {fnr} / {fpr} / {pc}".format(**ref["event_metrics"]),
        "  {station} foehn hours per year (mixture classification): {hours}".format(**ref["foehn_hours_per_year"]),
    ]
    return "\n".join(lines) + "\n"

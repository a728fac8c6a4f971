# import all the libraries
import argparse
import json
import os
import sys

# Import custom helper functions from utils/
from utils.charts import render_svg
from utils.classify import classify_series
from utils.config import LEARNERS, VARIABLE_SETS, load_config
from utils.data_processor import (
    aggregate_to_csv,               # period_start,value,availability export
    annual_daily_max,               # annual means of daily maxima
    daily_max,                      # daily maxima with availability
    foehn_hours_per_year,           # foehn hours counted from hourly labels
    hovmoller,                      # month x hour-of-day mean matrix
    hovmoller_to_csv,
    labels_to_csv,
    monthly_daily_max,              # decomposition input
    upscale_hourly,                 # 10-min posteriors -> hourly labels
)
from utils.decompose import (
    decade_seasonal,
    decade_seasonal_to_csv,
    fit_str,
    fit_to_csv,
    trend_significance,
)
from utils.errors import FoehnError
from utils.evaluate import (
    StationData,
    fit_jobs,
    make_folds,
    report_to_csv,
    run_cv,
    run_insample,
    summary_table,
    train_layout,
)
from utils.features import assemble, build_star, default_recipes, load_recipes
from utils.file_handler import (
    OutputSet,
    feature_table_outputs,
    frame_to_csv,
    load_gridded,
    load_observations,
    load_posterior_probabilities,
    load_series,
    posteriors_to_csv,
    to_json,
)
from utils.learners import model_from_dict, model_to_dict
from utils.logger import get_logger, log_run
from utils.reconstruct import reconstruct, reconstruction_report, reconstruction_to_csv
from utils.reconstruct import report_to_csv as reconstruction_report_to_csv
from utils.synth import SynthSpec, generate, load_synth_spec, synth_outputs

logger = get_logger("main")

COMMANDS = ("classify", "aggregate", "features", "train", "cv", "reconstruct", "decompose", "report", "synth")


class UsageError(Exception):
    pass


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems as exceptions instead of exiting with 2."""

    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser():
    parser = ArgumentParser(prog="main.py", description="Foehn classification, learning and reconstruction pipeline")
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(COMMANDS) + "}")

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="pipeline config (JSON)")
        p.add_argument("--out", default="output", help="output directory (default: output)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--run-log", dest="run_log", help="append a line to this CSV run log")
        return p

    def scoped(p):
        p.add_argument("--station", help="restrict to one valley station id")
        return p

    def learning(p):
        p.add_argument("--learner", action="append", choices=LEARNERS, help="learner(s) to run (repeatable)")
        p.add_argument("--set", dest="variable_set", choices=VARIABLE_SETS, help="variable set")
        p.add_argument("--jobs", type=int, default=1, help="worker threads (default: 1)")
        return p

    scoped(common(sub.add_parser("classify", help="mixture classification of 10-min observations")))
    scoped(common(sub.add_parser("aggregate", help="hourly labels, daily/monthly/annual aggregates")))
    features = scoped(common(sub.add_parser("features", help="assemble covariate tables")))
    features.add_argument("--set", dest="variable_set", choices=VARIABLE_SETS, help="variable set")
    for name, text in (("train", "fit hour-of-day models on the whole period"),
                       ("cv", "blocked two-year cross-validation"),
                       ("report", "in-sample model comparison")):
        learning(scoped(common(sub.add_parser(name, help=text))))
    recon = learning(scoped(common(sub.add_parser("reconstruct", help="hourly probabilities over the gridded span"))))
    recon.add_argument("--start", help="first hour of the span (default: first feature hour)")
    recon.add_argument("--end", help="last hour of the span (default: last feature hour)")
    decompose = learning(scoped(common(sub.add_parser("decompose", help="season-trend decomposition"))))
    decompose.add_argument("--input", help="reconstruction CSV (timestamp,p); default: from --out")
    synth = sub.add_parser("synth", help="generate a synthetic data set")
    common(synth, config_required=False)
    synth.add_argument("--years", type=int, help="number of years (default: 12)")
    return parser


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------

def target_stations(config, station_id=None):
    if station_id:
        station = config.station(station_id)
        if not station.is_valley:
            raise FoehnError(f"station {station_id} is not a valley station")
        return [station]
    return config.valley_stations()


def classify_station(config, station):
    crest = config.crest_of(station.id)
    valley_obs = load_observations(config.observation_path(station.id), station.meta)
    crest_obs = load_observations(config.observation_path(crest.id), crest.meta)
    return classify_series(valley_obs, crest_obs, station, config.mixture)


def posteriors_path(out, station_id):
    return os.path.join(out, "classify", f"{station_id}_posteriors.csv")


def labels_path(out, station_id):
    return os.path.join(out, "aggregate", f"{station_id}_labels.csv")


def station_labels(config, out, station):
    """Hourly labels from aggregate output, classify output, or a fresh classification."""
    path = labels_path(out, station.id)
    if os.path.isfile(path):
        return load_series(path, "label")
    path = posteriors_path(out, station.id)
    if os.path.isfile(path):
        return upscale_hourly(load_posterior_probabilities(path), station.id).label
    return upscale_hourly(classify_station(config, station), station.id).label


def station_features(config, gridded, station, variable_sets):
    star = build_star(station.meta, config.ridge)
    recipes = load_recipes(config.recipes_path) if config.recipes_path else default_recipes(gridded.names)
    return {vs: assemble(gridded, star, recipes, vs) for vs in variable_sets}


def learning_setup(config, args, variable_sets=None):
    stations = target_stations(config, args.station)
    variable_sets = variable_sets or [config.variable_set]
    gridded = load_gridded(config.gridded_path)
    data = {}
    for station in stations:
        tables = station_features(config, gridded, station, variable_sets)
        data[station.id] = StationData(
            station=station.id,
            labels=station_labels(config, args.out, station),
            features={vs: t.data for vs, t in tables.items()},
        )
    jobs = train_layout([s.id for s in stations], config.cv.hours, config.learners, variable_sets)
    return stations, data, jobs, gridded


def model_path(out, station_id, learner, variable_set, hour):
    return os.path.join(out, "models", station_id, f"{learner}_{variable_set}_{hour:02d}.json")


# ---------------------------------------------------------------------------
# Subcommands; each returns the OutputSet to commit
# ---------------------------------------------------------------------------

def cmd_classify(config, args):
    outputs = OutputSet()
    for station in target_stations(config, args.station):
        result = classify_station(config, station)
        outputs.add(posteriors_path(args.out, station.id), posteriors_to_csv(result))
        summary = {
            "station": station.id,
            "coverage": result.coverage,
            "mixture": result.params.to_dict() if result.params is not None else None,
        }
        outputs.add(os.path.join(args.out, "classify", f"{station.id}_mixture.json"), to_json(summary))
        print(f"✓ {station.id}: {result.coverage['within_sector_pct']:.1f}% of slots within sector")
    return outputs


def cmd_aggregate(config, args):
    outputs = OutputSet()
    for station in target_stations(config, args.station):
        path = posteriors_path(args.out, station.id)
        posteriors = load_posterior_probabilities(path) if os.path.isfile(path) else classify_station(config, station)
        labels = upscale_hourly(posteriors, station.id)
        base = os.path.join(args.out, "aggregate", station.id)
        outputs.add(labels_path(args.out, station.id), labels_to_csv(labels))
        outputs.add(f"{base}_daily_max.csv", aggregate_to_csv(daily_max(labels)))
        min_av = config.cv.min_availability
        outputs.add(f"{base}_monthly.csv", aggregate_to_csv(monthly_daily_max(labels, min_av)))
        outputs.add(f"{base}_annual.csv", aggregate_to_csv(annual_daily_max(labels, min_av)))
        matrix = hovmoller(labels)
        outputs.add(f"{base}_hovmoller.csv", hovmoller_to_csv(matrix))
        outputs.add(f"{base}_hovmoller.svg", render_svg("hovmoller", matrix))
        hours = foehn_hours_per_year(labels)
        outputs.add(f"{base}_foehn_hours.csv", frame_to_csv(hours, index=True))
        print(f"✓ {station.id}: {int(labels.label.notna().sum())} labeled hours, "
              f"{hours['foehn_hours'].mean():.1f} foehn hours per year")
    return outputs


def cmd_features(config, args):
    outputs = OutputSet()
    gridded = load_gridded(config.gridded_path)
    sets = [args.variable_set] if args.variable_set else list(VARIABLE_SETS)
    for station in target_stations(config, args.station):
        for vs, table in station_features(config, gridded, station, sets).items():
            path = os.path.join(args.out, "features", f"{station.id}_{vs}.csv")
            outputs.update(feature_table_outputs(table, path))
            print(f"✓ {station.id} [{vs}]: {table.data.shape[1]} columns, {len(table.data)} rows")
    return outputs


def cmd_train(config, args):
    outputs = OutputSet()
    _, data, jobs, _ = learning_setup(config, args)
    years = range(config.cv.start_year, config.cv.end_year + 1)
    models, skipped, _ = fit_jobs(jobs, data, config, years=years, n_jobs=args.jobs)
    for job, model in sorted(models.items()):
        path = model_path(args.out, job.station, job.learner, job.variable_set, job.hour)
        outputs.add(path, to_json(model_to_dict(model)))
    if not skipped.empty:
        outputs.add(os.path.join(args.out, "models", "skipped.csv"), frame_to_csv(skipped))
    print(f"✓ trained {len(models)} models, skipped {len(skipped)}")
    return outputs


def compared_sets(args):
    return [args.variable_set] if args.variable_set else list(VARIABLE_SETS)


def cmd_cv(config, args):
    outputs = OutputSet()
    _, data, jobs, _ = learning_setup(config, args, compared_sets(args))
    period = (config.cv.start_year, config.cv.end_year)
    plan = make_folds(period, {sid: d.labels for sid, d in data.items()}, config.cv.block_years)
    report = run_cv(plan, jobs, data, config, n_jobs=args.jobs)
    base = os.path.join(args.out, "cv")
    table = summary_table(report)
    outputs.add(os.path.join(base, "scores.csv"), report_to_csv(report))
    outputs.add(os.path.join(base, "summary.txt"), table)
    outputs.add(os.path.join(base, "skipped.csv"), frame_to_csv(report.skipped))
    if not report.scores.empty:
        outputs.add(os.path.join(base, "brier.svg"), render_svg("brier", report))
    print(table)
    return outputs


def cmd_report(config, args):
    outputs = OutputSet()
    _, data, jobs, _ = learning_setup(config, args, compared_sets(args))
    report, _ = run_insample(jobs, data, config, n_jobs=args.jobs)
    base = os.path.join(args.out, "report")
    table = summary_table(report)
    outputs.add(os.path.join(base, "insample_scores.csv"), report_to_csv(report))
    outputs.add(os.path.join(base, "summary.txt"), table)
    if not report.scores.empty:
        outputs.add(os.path.join(base, "brier.svg"), render_svg("brier", report))
    print(table)
    return outputs


def load_models(out, station_id, learner, variable_set):
    models = {}
    for hour in range(24):
        path = model_path(out, station_id, learner, variable_set, hour)
        if not os.path.isfile(path):
            continue
        with open(path, "r", encoding="utf-8") as f:
            models[hour] = model_from_dict(json.load(f))
    return models


def recon_path(out, station_id, learner, variable_set):
    return os.path.join(out, "reconstruct", f"{station_id}_{learner}_{variable_set}.csv")


def cmd_reconstruct(config, args):
    outputs = OutputSet()
    gridded = load_gridded(config.gridded_path)
    span = (args.start, args.end) if args.start and args.end else None
    vs = config.variable_set
    for station in target_stations(config, args.station):
        table = station_features(config, gridded, station, [vs])[vs]
        lpath = labels_path(args.out, station.id)
        observed = load_series(lpath, "label") if os.path.isfile(lpath) else None
        for learner in config.learners:
            models = load_models(args.out, station.id, learner, vs)
            recon = reconstruct(models, table, span=span, station=station.id, learner=learner, variable_set=vs)
            path = recon_path(args.out, station.id, learner, vs)
            base = os.path.splitext(path)[0]
            outputs.add(path, reconstruction_to_csv(recon))
            report = reconstruction_report(recon, observed)
            outputs.add(f"{base}_annual.csv", reconstruction_report_to_csv(report))
            outputs.add(f"{base}_annual.svg", render_svg("annual", report))
            matrix = hovmoller(recon.p)
            outputs.add(f"{base}_hovmoller.csv", hovmoller_to_csv(matrix))
            outputs.add(f"{base}_hovmoller.svg", render_svg("hovmoller", matrix))
            print(f"✓ {station.id} [{learner}/{vs}]: {len(recon)} hours, mean p {recon.p.mean():.3f}")
    return outputs


def cmd_decompose(config, args):
    outputs = OutputSet()
    vs = config.variable_set
    opts = config.decompose
    for station in target_stations(config, args.station):
        for learner in config.learners:
            path = args.input or recon_path(args.out, station.id, learner, vs)
            p = load_series(path, "p")
            monthly = monthly_daily_max(p, min_availability=0.0)
            fit = fit_str(monthly.values, opts.lambda_trend, opts.lambda_seasonal, grid=opts.grid)
            base = os.path.join(args.out, "decompose", f"{station.id}_{learner}_{vs}")
            matrix = decade_seasonal(fit)
            significant = trend_significance(fit)
            outputs.add(f"{base}_fit.csv", fit_to_csv(fit))
            outputs.add(f"{base}_decades.csv", decade_seasonal_to_csv(matrix))
            outputs.add(f"{base}_trend.svg", render_svg("trend", fit))
            outputs.add(f"{base}_decades.svg", render_svg("decade_seasonal", matrix))
            outputs.add(f"{base}_summary.json", to_json({
                "station": station.id, "learner": learner, "set": vs, "months": len(fit.y),
                "lambda_trend": fit.lambda_trend, "lambda_seasonal": fit.lambda_seasonal,
                "sigma2": fit.sigma2, "edf": fit.edf, "trend_significant": significant,
            }))
            print(f"✓ {station.id} [{learner}/{vs}]: trend {'differs' if significant else 'does not differ'} "
                  f"significantly from a constant")
            if args.input:
                break
    return outputs


def cmd_synth(args):
    spec = load_synth_spec(args.config) if args.config else SynthSpec()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.years is not None:
        changes["years"] = args.years
    spec = SynthSpec(**{**spec.__dict__, **changes})
    outputs = OutputSet()
    outputs.update(synth_outputs(generate(spec), args.out))
    print(f"✓ synthetic data set for {spec.years} years written to {args.out}")
    return outputs


HANDLERS = {
    "classify": cmd_classify,
    "aggregate": cmd_aggregate,
    "features": cmd_features,
    "train": cmd_train,
    "cv": cmd_cv,
    "reconstruct": cmd_reconstruct,
    "decompose": cmd_decompose,
    "report": cmd_report,
}


def run(argv):
    """
    Runs one subcommand.

    Returns:
    - 0 on success, 1 on a usage error, 2 on a data, configuration or
      estimation error; outputs are written only when the command succeeds
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage() + "main.py: error: a subcommand is required")
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return 1

    learners = getattr(args, "learner", None)
    variable_set = getattr(args, "variable_set", None)
    try:
        if args.command == "synth":
            outputs = cmd_synth(args)
        else:
            config = load_config(args.config).with_overrides(
                seed=args.seed,
                learners=learners,
                variable_set=variable_set if args.command != "features" else None,
            )
            outputs = HANDLERS[args.command](config, args)
        written = outputs.commit()
    except (FoehnError, OSError, ValueError) as err:
        logger.error("command failed", extra={"fields": {"command": args.command, "error": str(err)}})
        print(f"error: {err}", file=sys.stderr)
        if args.run_log:
            log_run(args.command, "error", getattr(args, "station", ""), "+".join(learners or []),
                    variable_set or "", 0, error=err, logfile=args.run_log)
        return 2

    logger.info("command finished", extra={"fields": {"command": args.command, "outputs": written}})
    if args.run_log:
        log_run(args.command, "ok", getattr(args, "station", ""), "+".join(learners or []),
                variable_set or "", written, logfile=args.run_log)
    return 0


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()

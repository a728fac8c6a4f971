import json
import os
import subprocess
import sys
import tempfile
import unittest

import pandas as pd

from main import run

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
FULL = os.environ.get("FOEHN_FULL_ACCEPTANCE") == "1"
CV_HOURS = [6, 12, 18]


def tune_config(path, **changes):
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    doc.update(changes)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f)


def pooled_test_scores(out):
    scores = pd.read_csv(os.path.join(out, "cv", "scores.csv"))
    pooled = scores[(scores["fold"] == "pooled") & (scores["split"] == "test")]
    return pooled.set_index("set")


def labeled_base_rate(out, years):
    labels = pd.read_csv(os.path.join(out, "aggregate", "synth_valley_labels.csv"))
    times = pd.to_datetime(labels["timestamp"], utc=True)
    keep = times.dt.hour.isin(CV_HOURS) & times.dt.year.isin(list(years))
    return float(labels.loc[keep, "label"].dropna().mean())


class TestCommandLine(unittest.TestCase):
    def test_unknown_flag_is_a_usage_error(self):
        result = subprocess.run(
            [sys.executable, "main.py", "classify", "--bogus"],
            capture_output=True,
            text=True,
            cwd=REPO,
        )
        self.assertEqual(result.returncode, 1)
        self.assertIn("usage:", result.stderr)

    def test_missing_subcommand(self):
        self.assertEqual(run([]), 1)

    def test_malformed_config(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "config.json")
            with open(path, "w", encoding="utf-8") as f:
                f.write('{"stations": [')
            self.assertEqual(run(["classify", "--config", path, "--out", tmp]), 2)

    def test_missing_config_file_is_logged(self):
        with tempfile.TemporaryDirectory() as tmp:
            log = os.path.join(tmp, "run_log.csv")
            code = run(["classify", "--config", os.path.join(tmp, "nope.json"), "--run-log", log])
            self.assertEqual(code, 2)
            with open(log, encoding="utf-8") as f:
                lines = f.read().splitlines()
            self.assertEqual(lines[0], "timestamp,command,station,learner,variable_set,status,n_outputs,error")
            self.assertIn(",classify,", lines[1])
            self.assertIn(",error,", lines[1])


class TestPipeline(unittest.TestCase):
    def test_synthetic_year_end_to_end(self):
        with tempfile.TemporaryDirectory() as tmp:
            data_dir = os.path.join(tmp, "synth")
            out = os.path.join(tmp, "output")
            config = os.path.join(data_dir, "config.json")

            self.assertEqual(run(["synth", "--out", data_dir, "--seed", "7", "--years", "1"]), 0)
            self.assertTrue(os.path.isfile(config))
            tune_config(config, lasso={"folds": 5, "n_lambda": 20})

            self.assertEqual(run(["classify", "--config", config, "--out", out]), 0)
            self.assertTrue(os.path.isfile(os.path.join(out, "classify", "synth_valley_posteriors.csv")))

            self.assertEqual(run(["aggregate", "--config", config, "--out", out]), 0)
            self.assertTrue(os.path.isfile(os.path.join(out, "aggregate", "synth_valley_labels.csv")))
            self.assertTrue(os.path.isfile(os.path.join(out, "aggregate", "synth_valley_hovmoller.svg")))

            learn = ["--config", config, "--out", out, "--learner", "lasso", "--set", "direct"]
            self.assertEqual(run(["train"] + learn), 0)
            models = os.listdir(os.path.join(out, "models", "synth_valley"))
            self.assertEqual(len(models), 24)

            self.assertEqual(run(["reconstruct"] + learn), 0)
            path = os.path.join(out, "reconstruct", "synth_valley_lasso_direct.csv")
            with open(path, encoding="utf-8") as f:
                lines = f.read().splitlines()
            self.assertEqual(lines[0], "timestamp,p")
            self.assertEqual(len(lines), 1 + 8760)

    def synthetic_cv(self, tmp, years, variable_set=None):
        data_dir = os.path.join(tmp, "synth")
        out = os.path.join(tmp, "output")
        config = os.path.join(data_dir, "config.json")
        self.assertEqual(run(["synth", "--out", data_dir, "--years", str(years)]), 0)
        tune_config(config, lasso={"folds": 5, "n_lambda": 20}, cv={
            "start_year": 2011, "end_year": 2010 + years, "hours": CV_HOURS, "block_years": years // 6,
        })
        self.assertEqual(run(["classify", "--config", config, "--out", out]), 0)
        self.assertEqual(run(["aggregate", "--config", config, "--out", out]), 0)
        args = ["cv", "--config", config, "--out", out, "--learner", "lasso"]
        if variable_set:
            args += ["--set", variable_set]
        self.assertEqual(run(args), 0)
        return out, labeled_base_rate(out, range(2011, 2011 + years))

    def test_six_year_cross_validation_has_skill(self):
        with tempfile.TemporaryDirectory() as tmp:
            out, base = self.synthetic_cv(tmp, 6, "full")
            with open(os.path.join(out, "cv", "scores.csv"), encoding="utf-8") as f:
                header = f.readline().strip()
            self.assertEqual(header, "station,learner,set,fold,split,brier,fnr,fpr,pc,n")
            full = pooled_test_scores(out).loc["full"]
            self.assertLess(full["brier"], 0.5 * base * (1.0 - base))
            self.assertGreater(full["pc"], 95.0)

    @unittest.skipUnless(FULL, "set FOEHN_FULL_ACCEPTANCE=1 for acceptance-size runs")
    def test_twelve_year_cross_validation(self):
        with tempfile.TemporaryDirectory() as tmp:
            out, base = self.synthetic_cv(tmp, 12)
            pooled = pooled_test_scores(out)
            self.assertLess(pooled.loc["full", "brier"], 0.5 * base * (1.0 - base))
            self.assertGreater(pooled.loc["full", "pc"], 95.0)
            self.assertLess(pooled.loc["full", "brier"], pooled.loc["direct", "brier"])


if __name__ == "__main__":
    unittest.main()

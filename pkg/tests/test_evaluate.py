import math
import unittest
from types import SimpleNamespace

import numpy as np
import pandas as pd

from utils.errors import ConfigError, ContractError
from utils.evaluate import (
    POOLED,
    StationData,
    brier,
    event_metrics,
    make_folds,
    metrics_from_confusion,
    report_to_csv,
    run_cv,
    run_insample,
    summary_table,
    train_layout,
)

LASSO = SimpleNamespace(folds=5, n_lambda=20, lambda_ratio=1e-4, max_iter=100, tol=1e-8)
CONFIG = SimpleNamespace(seed=3, lasso=LASSO, cv=SimpleNamespace(threshold=0.5, start_year=2011, end_year=2022))
INDEX = pd.date_range("2011-01-01T00:00:00Z", "2022-12-31T23:00:00Z", freq="h", name="timestamp")


def station_data(name="altdorf", seed=0, informative=False):
    rng = np.random.default_rng(seed)
    signal = rng.normal(size=len(INDEX))
    noise = rng.normal(size=len(INDEX))
    rate = 1.0 / (1.0 + np.exp(-(-2.5 + 2.5 * signal))) if informative else np.full(len(INDEX), 0.1)
    labels = pd.Series((rng.random(len(INDEX)) < rate).astype(float), index=INDEX)
    direct = pd.DataFrame({"noise": noise}, index=INDEX)
    full = pd.DataFrame({"noise": noise, "signal": signal}, index=INDEX)
    return StationData(name, labels, {"direct": direct, "full": full})


class TestFolds(unittest.TestCase):
    def test_six_two_year_folds(self):
        plan = make_folds((2011, 2022), station_data().labels)
        self.assertEqual([f.test_years for f in plan.folds],
                         [(2011, 2012), (2013, 2014), (2015, 2016), (2017, 2018), (2019, 2020), (2021, 2022)])
        covered = []
        for fold in plan.folds:
            self.assertFalse(set(fold.test_years) & set(fold.train_years))
            covered.extend(fold.test_years)
        self.assertEqual(sorted(covered), list(range(2011, 2023)))

    def test_ten_year_period(self):
        with self.assertRaises(ConfigError):
            make_folds((2011, 2020), station_data().labels)

    def test_one_year_blocks(self):
        plan = make_folds((2011, 2016), station_data().labels, block_years=1)
        self.assertEqual([f.test_years for f in plan.folds], [(y,) for y in range(2011, 2017)])
        self.assertEqual(plan.folds[0].train_years, (2012, 2013, 2014, 2015, 2016))
        with self.assertRaises(ConfigError):
            make_folds((2011, 2022), station_data().labels, block_years=1)
        with self.assertRaises(ConfigError):
            make_folds((2011, 2010), station_data().labels, block_years=0)

    def test_fold_without_labels_is_infeasible(self):
        labels = station_data().labels.copy()
        labels[(labels.index.year == 2013) | (labels.index.year == 2014)] = np.nan
        plan = make_folds((2011, 2022), {"altdorf": labels, "other": station_data("other").labels})
        self.assertEqual(plan.folds[1].infeasible_for, ("altdorf",))
        self.assertEqual(len(plan.feasible("altdorf")), 5)
        self.assertEqual(len(plan.feasible("other")), 6)


class TestLayout(unittest.TestCase):
    def test_job_counts(self):
        stations = ["altdorf", "montana", "lugano", "ellbogen", "sattelberg", "guetsch"]
        jobs = train_layout(stations, range(24), ["lasso", "stabsel", "gbt"], ["direct", "full"])
        self.assertEqual(len(jobs), 864)
        self.assertEqual(len(set(jobs)), 864)
        self.assertEqual(len(train_layout(["altdorf"], range(24), ["lasso"], ["full"])), 24)

    def test_rows_share_job_hour(self):
        X, y = station_data().rows("full", hour=7, years=[2015])
        self.assertTrue(np.all(X.index.hour == 7))
        self.assertTrue(np.all(X.index.year == 2015))
        self.assertEqual(len(X), 365)
        self.assertEqual(len(y), 365)


class TestScores(unittest.TestCase):
    def test_brier_examples(self):
        self.assertEqual(brier([1.0, 0.0, 1.0], [1, 0, 1]), 0.0)
        self.assertAlmostEqual(brier([0.5] * 4, [1, 0, 0, 0]), 0.25)
        self.assertAlmostEqual(brier([0.8, 0.3], [1, 0]), 0.065)

    def test_brier_of_constant_forecast(self):
        o = np.random.default_rng(2).random(500) < 0.3
        pbar, obar = 0.2, o.mean()
        self.assertAlmostEqual(brier(np.full(500, pbar), o), pbar ** 2 + obar * (1 - 2 * pbar), places=12)

    def test_brier_length_mismatch(self):
        with self.assertRaises(ContractError):
            brier([0.1, 0.2], [1])

    def test_event_metrics_example(self):
        fnr, fpr, pc = metrics_from_confusion(tp=84, fn=16, fp=1, tn=899)
        self.assertAlmostEqual(fnr, 16.0)
        self.assertAlmostEqual(fpr, 100.0 / 900.0)
        self.assertAlmostEqual(pc, 98.3)

    def test_all_correct(self):
        self.assertEqual(event_metrics([0.9, 0.1, 0.7], [1, 0, 1]), (0.0, 0.0, 100.0))

    def test_no_positives_leaves_fnr_missing(self):
        fnr, fpr, pc = event_metrics([0.1, 0.2, 0.3], [0, 0, 0])
        self.assertTrue(math.isnan(fnr))
        self.assertEqual((fpr, pc), (0.0, 100.0))


class TestCrossValidation(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.data = {"altdorf": station_data(seed=1)}
        cls.plan = make_folds((2011, 2022), cls.data["altdorf"].labels)
        cls.jobs = train_layout(["altdorf"], [0, 12], ["climatology"], ["direct"])
        cls.report = run_cv(cls.plan, cls.jobs, cls.data, CONFIG, n_jobs=2)

    def test_climatology_test_brier_is_base_rate_variance(self):
        row = self.report.select(fold=POOLED, split="test").iloc[0]
        pbar = self.data["altdorf"].labels.mean()
        self.assertAlmostEqual(row["brier"], pbar * (1 - pbar), delta=0.01)

    def test_pooled_test_rows_cover_all_labeled_hours(self):
        row = self.report.select(fold=POOLED, split="test").iloc[0]
        self.assertEqual(row["n"], 2 * len(INDEX) // 24)

    def test_reported_rates_match_confusion(self):
        for _, row in self.report.scores.iterrows():
            fnr, fpr, pc = metrics_from_confusion(row["tp"], row["fn"], row["fp"], row["tn"])
            self.assertEqual(row["fpr"], fpr)
            self.assertEqual(row["pc"], pc)
            self.assertTrue(row["fnr"] == fnr or (math.isnan(row["fnr"]) and math.isnan(fnr)))

    def test_deterministic(self):
        again = run_cv(self.plan, self.jobs, self.data, CONFIG, n_jobs=1)
        pd.testing.assert_frame_equal(again.scores, self.report.scores)
        self.assertEqual(report_to_csv(again), report_to_csv(self.report))

    def test_report_layout(self):
        csv = report_to_csv(self.report).splitlines()
        self.assertEqual(csv[0], "station,learner,set,fold,split,brier,fnr,fpr,pc,n")
        self.assertEqual(len(csv), 1 + 7 * 2)  # 6 folds + pooled, train and test

    def test_missing_feature_hours_are_skipped(self):
        data = station_data(seed=2)
        direct = data.features["direct"]
        data.features["direct"] = direct[direct.index.hour != 5]
        jobs = train_layout(["altdorf"], [5, 6], ["climatology"], ["direct"])
        report = run_cv(self.plan, jobs, {"altdorf": data}, CONFIG)
        self.assertEqual(len(report.skipped), 6)
        self.assertTrue((report.skipped["hour"] == 5).all())
        self.assertFalse(report.select(fold=POOLED, split="test").empty)

    def test_summary_table(self):
        text = summary_table(self.report)
        self.assertIn("altdorf", text)
        self.assertIn("climatology", text)
        self.assertIn("Reference targets", text)


class TestInformativeFullSet(unittest.TestCase):
    def test_full_beats_direct(self):
        data = {"altdorf": station_data(seed=4, informative=True)}
        plan = make_folds((2011, 2022), data["altdorf"].labels)
        jobs = train_layout(["altdorf"], [12], ["lasso"], ["direct", "full"])
        report = run_cv(plan, jobs, data, CONFIG)
        test = report.select(fold=POOLED, split="test").set_index("set")["brier"]
        self.assertLess(test["full"], test["direct"])

    def test_insample_mode(self):
        data = {"altdorf": station_data(seed=5)}
        jobs = train_layout(["altdorf"], [3], ["climatology"], ["direct"])
        report, models = run_insample(jobs, data, CONFIG)
        self.assertEqual(report.mode, "insample")
        self.assertEqual(set(models), set(jobs))
        self.assertIn("in-sample", summary_table(report))


if __name__ == "__main__":
    unittest.main()

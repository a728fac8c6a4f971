import os
import tempfile
import unittest

import numpy as np
import pandas as pd

from utils.charts import render_svg
from utils.data_processor import hovmoller

TREND = pd.DataFrame({
    "year": np.repeat(np.arange(2000, 2005), 12),
    "month": np.tile(np.arange(1, 13), 5),
    "y": np.linspace(0.2, 0.4, 60),
    "trend": np.linspace(0.2, 0.4, 60),
    "ci_lo": np.linspace(0.18, 0.38, 60),
    "ci_hi": np.linspace(0.22, 0.42, 60),
})
ANNUAL = pd.DataFrame({
    "year": [2019, 2020, 2021],
    "recon_annual_mean": [0.31, 0.33, 0.35],
    "obs_annual_mean": [np.nan, 0.34, 0.36],
})
SCORES = pd.DataFrame({
    "station": ["a", "a", "a", "a"],
    "learner": ["lasso", "gbt", "lasso", "gbt"],
    "set": ["direct", "direct", "full", "full"],
    "fold": ["pooled"] * 4,
    "split": ["test"] * 4,
    "brier": [0.04, 0.05, 0.03, 0.035],
})


class TestCharts(unittest.TestCase):
    def test_identical_input_gives_identical_bytes(self):
        index = pd.date_range("2020-01-01T00:00:00Z", periods=24 * 60, freq="h")
        matrix = hovmoller(pd.Series(np.linspace(0.0, 1.0, len(index)), index=index))
        decades = pd.DataFrame({1990: np.sin(np.arange(12)), 2000: np.cos(np.arange(12))}, index=range(1, 13))
        decades["all"] = decades.mean(axis=1)
        for kind, data in (("trend", TREND), ("annual", ANNUAL), ("brier", SCORES),
                           ("hovmoller", matrix), ("decade_seasonal", decades)):
            first = render_svg(kind, data)
            self.assertTrue(first.lstrip().startswith("<?xml"), kind)
            self.assertEqual(first, render_svg(kind, data), kind)

    def test_band_drawn_before_trend_line(self):
        svg = render_svg("trend", TREND)
        self.assertIn('id="ci_band"', svg)
        self.assertIn('id="trend_line"', svg)
        self.assertLess(svg.index('id="ci_band"'), svg.index('id="trend_line"'))

    def test_constant_hovmoller_has_one_legend_entry(self):
        matrix = pd.DataFrame(0.3, index=range(1, 13), columns=range(24))
        svg = render_svg("hovmoller", matrix)
        self.assertEqual(svg.count('id="hovmoller_legend"'), 1)
        self.assertNotIn('id="hovmoller_colorbar"', svg)
        self.assertIn("0.30", svg)

    def test_varying_hovmoller_has_colour_scale(self):
        index = pd.date_range("2020-01-01T00:00:00Z", periods=24 * 366, freq="h")
        matrix = hovmoller(pd.Series(np.linspace(0.0, 1.0, len(index)), index=index))
        svg = render_svg("hovmoller", matrix)
        self.assertIn('id="hovmoller_colorbar"', svg)
        self.assertNotIn('id="hovmoller_legend"', svg)

    def test_written_to_path(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "charts", "annual.svg")
            svg = render_svg("annual", ANNUAL, path)
            with open(path, encoding="utf-8") as f:
                self.assertEqual(f.read(), svg)

    def test_empty_data(self):
        with self.assertRaises(ValueError):
            render_svg("annual", ANNUAL.iloc[0:0])
        with self.assertRaises(ValueError):
            render_svg("trend", TREND.assign(trend=np.nan, ci_lo=np.nan, ci_hi=np.nan, y=np.nan, year=np.nan,
                                             month=np.nan))

    def test_unknown_kind(self):
        with self.assertRaises(ValueError):
            render_svg("pie", ANNUAL)


if __name__ == "__main__":
    unittest.main()

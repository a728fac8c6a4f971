import itertools
import unittest

import numpy as np
import pandas as pd

from utils.data_processor import (
    FOEHN,
    MISSING,
    NO_FOEHN,
    aggregate_to_csv,
    daily_max,
    foehn_hours_per_year,
    hourly_label,
    hovmoller,
    hovmoller_by_decade,
    monthly_daily_max,
    periodic_mean,
    upscale_hourly,
)
from utils.errors import ContractError


def hourly(values, start="2020-01-01T01:00:00Z"):
    index = pd.date_range(start, periods=len(values), freq="h", name="timestamp")
    return pd.Series(np.asarray(values, dtype=float), index=index)


class TestHourlyLabel(unittest.TestCase):
    def test_matches_enumeration_of_all_slot_states(self):
        # each slot is foehn (0.9), no foehn (0.1) or missing
        states = {"f": 0.9, "n": 0.1, "m": None}
        for combo in itertools.product("fnm", repeat=6):
            available = [c for c in combo if c != "m"]
            foehn = available.count("f")
            if len(available) < 4:
                expected = MISSING
            elif foehn / len(available) >= 0.5:
                expected = FOEHN
            else:
                expected = NO_FOEHN
            self.assertEqual(hourly_label([states[c] for c in combo]), expected, combo)

    def test_examples(self):
        self.assertEqual(hourly_label([0.9, 0.9, 0.9, 0.1, 0.1, 0.1]), FOEHN)
        self.assertEqual(hourly_label([0.9, 0.9, 0.1, 0.1, 0.1, None]), NO_FOEHN)
        self.assertEqual(hourly_label([0.9, 0.9, 0.9, None, None, None]), MISSING)
        self.assertEqual(hourly_label([0.5, 0.5, 0.0, 0.0]), FOEHN)

    def test_more_than_six_slots_rejected(self):
        with self.assertRaises(ContractError):
            hourly_label([0.1] * 7)


class TestUpscaleHourly(unittest.TestCase):
    def test_slots_belong_to_the_following_full_hour(self):
        slots = pd.date_range("2020-01-01T00:10:00Z", periods=12, freq="10min")
        # 00:10..01:00 foehn, 01:10..02:00 calm
        p = pd.Series([0.9] * 6 + [0.1] * 6, index=slots)
        labels = upscale_hourly(p, "X").label
        self.assertEqual(list(labels.index.strftime("%H:%M")), ["01:00", "02:00"])
        self.assertEqual(list(labels), [1.0, 0.0])

    def test_sparse_hour_is_missing(self):
        slots = pd.date_range("2020-01-01T00:10:00Z", periods=6, freq="10min")
        p = pd.Series([0.9, 0.9, 0.9, np.nan, np.nan, np.nan], index=slots)
        labels = upscale_hourly(p).label
        self.assertTrue(np.isnan(labels.iloc[0]))


class TestAggregates(unittest.TestCase):
    def test_daily_max_day_owns_hours_after_midnight(self):
        # 24 hours 01:00 .. next day 00:00 form one day
        values = np.zeros(24)
        values[-1] = 0.7  # 2020-01-02 00:00 still belongs to 2020-01-01
        agg = daily_max(hourly(values))
        self.assertEqual(len(agg.values), 1)
        self.assertEqual(agg.values.index[0].strftime("%Y-%m-%d"), "2020-01-01")
        self.assertAlmostEqual(agg.values.iloc[0], 0.7)
        self.assertAlmostEqual(agg.availability.iloc[0], 1.0)

    def test_daily_availability_counts_missing_hours(self):
        values = np.full(24, 0.2)
        values[:6] = np.nan
        agg = daily_max(hourly(values))
        self.assertAlmostEqual(agg.availability.iloc[0], 18 / 24)

    def test_monthly_mean_suppressed_below_availability(self):
        # January 2020 with 20 days of data out of 31
        days = 20
        rng = np.random.default_rng(3)
        values = rng.random(24 * days)
        agg = periodic_mean(daily_max(hourly(values)), "month", min_availability=0.8)
        self.assertTrue(np.isnan(agg.values.iloc[0]))
        self.assertAlmostEqual(agg.availability.iloc[0], days / 31)

        lenient = periodic_mean(daily_max(hourly(values)), "month", min_availability=0.0)
        expected = values.reshape(days, 24).max(axis=1).mean()
        self.assertAlmostEqual(lenient.values.iloc[0], expected, places=12)

    def test_annual_mean_of_daily_maxima_equals_brute_force(self):
        rng = np.random.default_rng(7)
        values = rng.random(24 * 366)  # 2020 is a leap year
        agg = periodic_mean(daily_max(hourly(values)), "year")
        self.assertEqual(agg.period, "annual_mean_of_daily_max")
        self.assertAlmostEqual(agg.values.iloc[0], values.reshape(366, 24).max(axis=1).mean(), places=12)
        self.assertAlmostEqual(agg.availability.iloc[0], 1.0)

    def test_monthly_daily_max_export(self):
        values = np.full(24 * 31, 0.25)
        csv = aggregate_to_csv(monthly_daily_max(hourly(values)))
        lines = csv.splitlines()
        self.assertEqual(lines[0], "period_start,value,availability")
        self.assertEqual(lines[1], "2020-01-01T00:00:00Z,0.25,1.0")


class TestHovmoller(unittest.TestCase):
    def test_diurnal_sinusoid_cell_means(self):
        index = pd.date_range("2019-01-01T00:00:00Z", "2020-12-31T23:00:00Z", freq="h")
        values = 0.5 + 0.4 * np.sin(2 * np.pi * index.hour / 24)
        matrix = hovmoller(pd.Series(values, index=index))
        self.assertEqual(matrix.shape, (12, 24))
        expected = 0.5 + 0.4 * np.sin(2 * np.pi * np.arange(24) / 24)
        for month in range(1, 13):
            np.testing.assert_allclose(matrix.loc[month].to_numpy(), expected, atol=1e-12)

    def test_missing_months_stay_empty(self):
        index = pd.date_range("2020-01-01T00:00:00Z", periods=24 * 31, freq="h")
        matrix = hovmoller(pd.Series(0.3, index=index))
        self.assertTrue(matrix.loc[2].isna().all())
        self.assertAlmostEqual(matrix.loc[1, 12], 0.3)

    def test_by_decade(self):
        index = pd.date_range("1949-12-01T00:00:00Z", "1950-01-31T23:00:00Z", freq="h")
        values = np.where(index.year < 1950, 0.2, 0.6)
        matrices = hovmoller_by_decade(pd.Series(values, index=index))
        self.assertEqual(sorted(matrices), [1940, 1950])
        self.assertAlmostEqual(matrices[1940].loc[12, 5], 0.2)
        self.assertAlmostEqual(matrices[1950].loc[1, 5], 0.6)


class TestFoehnHours(unittest.TestCase):
    def test_counts_labeled_foehn_hours(self):
        index = pd.date_range("2021-01-01T00:00:00Z", "2021-12-31T23:00:00Z", freq="h")
        labels = np.zeros(len(index))
        labels[:482] = 1.0
        labels[-100:] = np.nan
        table = foehn_hours_per_year(pd.Series(labels, index=index))
        self.assertEqual(int(table.loc[2021, "foehn_hours"]), 482)
        self.assertAlmostEqual(table.loc[2021, "availability"], (8760 - 100) / 8760)


if __name__ == "__main__":
    unittest.main()

import unittest
import warnings

import numpy as np

from src.comparators import cox_wald, kaplan_meier, km_compare, method_statistic
from src.errors import FlatEstimateWarning
from src.stratified_cox import fit_mple
from src.survival_data import Dataset, snapshot
from tests import oracles


def two_arm_snapshot(times0, events0, times1, events1, covariates=None, u=100.0):
    n0, n1 = len(times0), len(times1)
    n = n0 + n1
    covariates = np.zeros((n, 0)) if covariates is None else np.asarray(covariates, float).reshape(n, -1)
    data = Dataset([f"s{j}" for j in range(n)], [0] * n0 + [1] * n1, np.zeros(n),
                   list(times0) + list(times1), list(events0) + list(events1), covariates)
    return snapshot(data, u)


class TestKaplanMeier(unittest.TestCase):
    def test_product_limit_by_hand(self):
        snap = two_arm_snapshot([1, 2, 3, 4], [1, 1, 0, 0], [1, 2], [0, 0])
        estimate, variance = kaplan_meier(snap, 0).at(2.5)
        self.assertAlmostEqual(estimate, 0.5)
        self.assertAlmostEqual(variance, 0.25 * (1 / 12 + 1 / 6))

    def test_uncensored_equals_empirical_survival(self):
        rng = np.random.default_rng(2)
        times = rng.exponential(size=50)
        snap = two_arm_snapshot(times, [1] * 50, [1.0], [0])
        for t0 in (0.3, 0.8, 1.5):
            self.assertAlmostEqual(kaplan_meier(snap, 0).at(t0)[0], np.mean(times > t0))

    def test_matches_loop_and_dominated_by_nelson_aalen(self):
        rng = np.random.default_rng(8)
        times = np.round(rng.exponential(size=40), 1)
        events = rng.random(40) < 0.7
        snap = two_arm_snapshot(times, events, [1.0], [0])
        km = kaplan_meier(snap, 0)
        for t0 in (0.2, 0.5, 1.0, 2.0):
            s, v = km.at(t0)
            ref_s, ref_v = oracles.kaplan_meier(times, events, t0)
            self.assertAlmostEqual(s, ref_s)
            self.assertAlmostEqual(v, ref_v)
            self.assertLessEqual(s, np.exp(-km.cumulative_hazard(t0)) + 1e-12)
        self.assertTrue(np.all(np.diff(km.survival) <= 0))
        self.assertTrue(np.all(km.greenwood >= 0))

    def test_no_events_gives_zero_variance_flag(self):
        snap = two_arm_snapshot([2, 3], [0, 0], [2, 3], [0, 0])
        result = km_compare(snap, 1.0)
        self.assertEqual(result.diff, 0.0)
        self.assertEqual(result.z, 0.0)
        self.assertTrue(result.zero_variance)

    def test_flat_carry_forward_warns(self):
        snap = two_arm_snapshot([0.5, 1.0], [1, 0], [0.5, 2.0, 3.0], [1, 0, 1])
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = km_compare(snap, 1.5)
        self.assertTrue(any(issubclass(w.category, FlatEstimateWarning) for w in caught))
        self.assertEqual(result.carried_flat, (0,))
        self.assertAlmostEqual(result.s_hat[0], 0.5)

    def test_statistic_and_information(self):
        snap = two_arm_snapshot([1, 2, 3, 4], [1, 1, 0, 1], [1.5, 2.5, 3.5, 4.5], [0, 1, 0, 0])
        result = km_compare(snap, 3.0)
        self.assertAlmostEqual(result.z, result.diff / np.sqrt(sum(result.variances)))
        self.assertAlmostEqual(result.info_level, 1 / sum(result.variances))


class TestCoxWald(unittest.TestCase):
    def test_identical_arms_give_zero(self):
        times = [1.0, 2.0, 3.0, 4.0]
        events = [1, 0, 1, 1]
        result = cox_wald(two_arm_snapshot(times, events, times, events))
        self.assertEqual(result.beta_w_hat, 0.0)
        self.assertEqual(result.z, 0.0)

    def test_same_as_stratified_fit_with_indicator(self):
        times0, times1 = [1.0, 2.5, 3.0, 4.2, 5.0], [0.8, 1.7, 2.2, 3.9, 6.0]
        events = [1, 1, 0, 1, 1]
        z = [0.3, -0.2, 1.1, 0.4, -0.9, 0.5, 0.0, -1.2, 0.8, 0.2]
        snap = two_arm_snapshot(times0, events, times1, events, z)
        result = cox_wald(snap)
        reference = fit_mple(snap.pooled_with_treatment())
        self.assertEqual(result.beta_w_hat, reference.beta_hat[0])
        cov = np.linalg.inv(reference.observed_information)
        self.assertAlmostEqual(result.se, np.sqrt(cov[0, 0]))
        self.assertAlmostEqual(result.z, result.beta_w_hat / result.se)


class TestMethodStatistic(unittest.TestCase):
    def test_dispatch(self):
        snap = two_arm_snapshot([1, 2, 3, 4], [1, 1, 0, 1], [1.5, 2.5, 3.5, 4.5], [0, 1, 0, 0])
        z, info = method_statistic("km", snap, 3.0)
        self.assertEqual((z, info), (km_compare(snap, 3.0).z, km_compare(snap, 3.0).info_level))
        with self.assertRaises(ValueError):
            method_statistic("logrank", snap, 3.0)


if __name__ == '__main__':
    unittest.main()

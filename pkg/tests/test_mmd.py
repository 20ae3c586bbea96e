import json
import unittest

import numpy as np

from mmdforge.errors import ContractError, InsufficientSampleError
from mmdforge.kernels import Gaussian, Linear, MixtureRBF, Polynomial
from mmdforge.mmd import (
    estimator_weights,
    mmd2,
    mmd2_biased,
    mmd2_pooled,
    mmd2_unbiased,
    moment_diagnostic,
    permutation_test,
)
from mmdforge.tensor_engine import Tensor
from tests.utils import loop_mmd2, random_samples, slow


class TestEstimators(unittest.TestCase):

    def test_matches_loop(self):
        x, y = random_samples(6, 5, 2, seed=0, shift=0.5)
        for kernel in (Gaussian(1.5), MixtureRBF(), MixtureRBF(relative=True),
                       Linear(), Polynomial(2, 1.0)):
            self.assertAlmostEqual(
                mmd2_unbiased(x, y, kernel).estimate,
                loop_mmd2(x, y, kernel, unbiased=True), places=12,
            )
            self.assertAlmostEqual(
                mmd2_biased(x, y, kernel).estimate,
                loop_mmd2(x, y, kernel, unbiased=False), places=12,
            )

    def test_swap_is_exact(self):
        x, y = random_samples(9, 7, 3, seed=1, shift=0.3)
        for kernel in (Gaussian(1.0), MixtureRBF()):
            for estimate in (mmd2_unbiased, mmd2_biased):
                self.assertEqual(
                    estimate(x, y, kernel).estimate,
                    estimate(y, x, kernel).estimate,
                )

    def test_identical_samples(self):
        x, _ = random_samples(8, 1, 2, seed=2)
        self.assertEqual(mmd2_biased(x, x, MixtureRBF()).estimate, 0.0)
        self.assertLessEqual(mmd2_unbiased(x, x, MixtureRBF()).estimate, 0.0)
        repeated = np.ones((4, 2))
        self.assertAlmostEqual(
            mmd2_unbiased(repeated, repeated, Gaussian(1.0)).estimate, 0.0, 15
        )

    def test_biased_non_negative(self):
        for seed in range(5):
            x, y = random_samples(5, 4, 2, seed=seed)
            self.assertGreaterEqual(mmd2_biased(x, y, Gaussian(1.0)).estimate, -1e-15)

    def test_per_component_sums(self):
        x, y = random_samples(10, 8, 2, seed=3, shift=1.0)
        report = mmd2_unbiased(x, y, MixtureRBF())
        self.assertEqual(len(report.per_component), 5)
        self.assertAlmostEqual(sum(report.per_component), report.estimate, 12)
        self.assertIsNone(mmd2_unbiased(x, y, Gaussian(1.0)).per_component)

    def test_report_fields(self):
        x, y = random_samples(4, 3, 2, seed=4)
        report = mmd2_biased(x, y, Linear())
        self.assertEqual((report.n, report.m), (4, 3))
        self.assertEqual(report.estimator_kind, "biased")
        payload = json.loads(report.to_json())
        self.assertEqual(payload["kernel"], {"kind": "linear"})

    def test_sample_size_limits(self):
        x, y = random_samples(1, 3, 2)
        with self.assertRaises(InsufficientSampleError):
            mmd2_unbiased(x, y, Gaussian(1.0))
        self.assertTrue(np.isfinite(mmd2_biased(x, y, Gaussian(1.0)).estimate))
        with self.assertRaises(InsufficientSampleError):
            mmd2_biased(np.zeros((0, 2)), y, Gaussian(1.0))

    def test_differentiable_matches_reports(self):
        x, y = random_samples(6, 6, 3, seed=5, shift=0.4)
        kernel = MixtureRBF((1.0, 2.0))
        self.assertAlmostEqual(
            mmd2(Tensor(x), Tensor(y), kernel, "biased").item(),
            mmd2_biased(x, y, kernel).estimate, places=12,
        )
        self.assertAlmostEqual(
            mmd2(Tensor(x), Tensor(y), kernel, "unbiased").item(),
            mmd2_unbiased(x, y, kernel).estimate, places=12,
        )
        with self.assertRaises(ContractError):
            mmd2(Tensor(x), Tensor(y), kernel, "plugin")


class TestClosedForms(unittest.TestCase):

    def setUp(self):
        self.x, self.y = random_samples(9, 6, 3, seed=21, shift=0.7)

    def test_linear_is_mean_gap(self):
        x, y = self.x, self.y
        gap = x.mean(axis=0) - y.mean(axis=0)
        self.assertAlmostEqual(mmd2_biased(x, y, Linear()).estimate, gap @ gap, 12)
        sx, sy = x.sum(axis=0), y.sum(axis=0)
        n, m = len(x), len(y)
        unbiased = (
            (sx @ sx - np.sum(x * x)) / (n * (n - 1))
            + (sy @ sy - np.sum(y * y)) / (m * (m - 1))
            - 2.0 * (sx @ sy) / (n * m)
        )
        self.assertAlmostEqual(mmd2_unbiased(x, y, Linear()).estimate, unbiased, 12)

    def test_polynomial_offsets_cancel_at_degree_one(self):
        gap = self.x.mean(axis=0) - self.y.mean(axis=0)
        for offset in (0.0, 1.0, 7.5):
            self.assertAlmostEqual(
                mmd2_biased(self.x, self.y, Polynomial(1, offset)).estimate,
                gap @ gap, 10,
            )

    def test_polynomial_degree_two_is_moment_gaps(self):
        x, y = self.x, self.y
        gap = x.mean(axis=0) - y.mean(axis=0)
        second = x.T @ x / len(x) - y.T @ y / len(y)
        expected = 2.0 * (gap @ gap) + np.sum(second * second)
        self.assertAlmostEqual(
            mmd2_biased(x, y, Polynomial(2, 1.0)).estimate, expected, 10
        )


class TestPooled(unittest.TestCase):

    def test_weights_cancel_constants(self):
        for estimator in ("biased", "unbiased"):
            weights = estimator_weights(4, 3, estimator)
            self.assertAlmostEqual(weights.sum(), 0.0, 15)
            np.testing.assert_array_equal(weights, weights.T)
        self.assertEqual(np.trace(estimator_weights(4, 3, "unbiased")), 0.0)

    def test_matches_reports(self):
        x, y = random_samples(7, 5, 2, seed=22, shift=0.6)
        z = Tensor(np.vstack([x, y]))
        for kernel in (MixtureRBF((1.0, 2.0)), MixtureRBF(relative=True), Linear()):
            self.assertAlmostEqual(
                mmd2_pooled(z, 7, kernel, "biased").item(),
                mmd2_biased(x, y, kernel).estimate, 12,
            )
            self.assertAlmostEqual(
                mmd2_pooled(z, 7, kernel, "unbiased").item(),
                mmd2_unbiased(x, y, kernel).estimate, 12,
            )
        with self.assertRaises(InsufficientSampleError):
            mmd2_pooled(z, 12, Linear())

    def test_relative_kernel_test_ignores_units(self):
        x, y = random_samples(20, 20, 2, seed=23, shift=0.8)
        kernel = MixtureRBF(relative=True)
        small = permutation_test(x, y, kernel, n_permutations=100, seed=4)
        large = permutation_test(1e4 * x, 1e4 * y, kernel, n_permutations=100,
                                 seed=4)
        self.assertAlmostEqual(small.statistic, large.statistic, 8)
        self.assertEqual(small.p_value, large.p_value)
        self.assertEqual(small.reject, large.reject)


class TestPermutationTest(unittest.TestCase):

    def test_threshold_matches_explicit_resplits(self):
        x, y = random_samples(6, 5, 2, seed=6, shift=0.5)
        kernel = Gaussian(1.0)
        decision = permutation_test(x, y, kernel, alpha=0.1, n_permutations=100,
                                    seed=11)
        pooled = np.vstack([x, y])
        rng = np.random.default_rng(11)
        null = []
        for _ in range(100):
            order = rng.permutation(11)
            chosen = np.zeros(11, dtype=bool)
            chosen[order[:6]] = True
            null.append(
                mmd2_unbiased(pooled[chosen], pooled[~chosen], kernel).estimate
            )
        self.assertAlmostEqual(decision.threshold, np.quantile(null, 0.9), 10)
        self.assertAlmostEqual(decision.null_std, np.std(null, ddof=1), 10)
        self.assertEqual(decision.reject, decision.statistic > decision.threshold)

    def test_rejects_separated_samples(self):
        x, y = random_samples(40, 40, 2, seed=7, shift=3.0)
        decision = permutation_test(x, y, MixtureRBF(), n_permutations=200)
        self.assertTrue(decision.reject)
        self.assertAlmostEqual(decision.p_value, 1.0 / 201.0)

    def test_seed_determinism(self):
        x, y = random_samples(20, 20, 2, seed=8)
        first = permutation_test(x, y, Gaussian(1.0), seed=3)
        second = permutation_test(x, y, Gaussian(1.0), seed=3)
        self.assertEqual(first.to_json(), second.to_json())
        self.assertGreater(first.p_value, 0.0)
        self.assertLessEqual(first.p_value, 1.0)

    def test_validation(self):
        x, y = random_samples(5, 5, 2)
        with self.assertRaises(ContractError):
            permutation_test(x, y, Gaussian(1.0), alpha=1.0)
        with self.assertRaises(ContractError):
            permutation_test(x, y, Gaussian(1.0), n_permutations=99)
        with self.assertRaises(InsufficientSampleError):
            permutation_test(x[:1], y, Gaussian(1.0))


class TestProperties(unittest.TestCase):

    def test_triangle_inequality(self):
        kernel = MixtureRBF()
        for seed in range(20):
            rng = np.random.default_rng(seed)
            x, y, z = (rng.standard_normal((12, 2)) + rng.uniform(-1, 1, 2)
                       for _ in range(3))

            def dist(a, b):
                return np.sqrt(max(mmd2_biased(a, b, kernel).estimate, 0.0))
            self.assertLessEqual(dist(x, z), dist(x, y) + dist(y, z) + 1e-9)

    @slow
    def test_oracle_grid(self):
        rng = np.random.default_rng(12)
        for _ in range(500):
            n, m = rng.integers(2, 65, size=2)
            d = int(rng.integers(1, 9))
            x = rng.standard_normal((n, d))
            y = rng.standard_normal((m, d)) + rng.uniform(-1, 1)
            if rng.random() < 0.5:
                kernel = Gaussian(float(rng.uniform(0.5, 4.0)))
            else:
                kernel = MixtureRBF((1.0, 2.0, 4.0))
            self.assertAlmostEqual(mmd2_unbiased(x, y, kernel).estimate,
                                   loop_mmd2(x, y, kernel, True), places=12)
            self.assertAlmostEqual(mmd2_biased(x, y, kernel).estimate,
                                   loop_mmd2(x, y, kernel, False), places=12)


class TestCalibration(unittest.TestCase):

    @slow
    def test_null_rejection_rate(self):
        rejections = 0
        for trial in range(400):
            x, y = random_samples(100, 100, 2, seed=1000 + trial)
            rejections += permutation_test(x, y, MixtureRBF(), alpha=0.05,
                                           n_permutations=500, seed=trial).reject
        self.assertTrue(0.025 <= rejections / 400.0 <= 0.10)

    @slow
    def test_power_under_mean_shift(self):
        rejections = 0
        for trial in range(100):
            x, y = random_samples(100, 100, 2, seed=2000 + trial, shift=3.0)
            rejections += permutation_test(x, y, MixtureRBF(),
                                           n_permutations=200, seed=trial).reject
        self.assertGreaterEqual(rejections, 95)


class TestMoments(unittest.TestCase):

    def test_polynomial_identity(self):
        x, y = random_samples(30, 25, 3, seed=9, shift=0.2)
        report = moment_diagnostic(x, y)
        self.assertLess(report.residual, 1e-10)
        self.assertGreater(report.first_moment_gap, 0.0)

    def test_identity_on_random_instances(self):
        for seed in range(100):
            x, y = random_samples(16, 16, 3, seed=seed, shift=0.5)
            self.assertLess(moment_diagnostic(x, y).residual, 1e-10)

    def test_point_masses(self):
        report = moment_diagnostic(np.zeros((3, 1)), np.ones((2, 1)))
        self.assertAlmostEqual(report.first_moment_gap, 1.0, 12)
        self.assertAlmostEqual(report.poly_mmd2, 3.0, 12)

    def test_equal_moments(self):
        x = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        y = -x
        report = moment_diagnostic(x, y)
        self.assertAlmostEqual(report.first_moment_gap, 0.0, 15)
        self.assertAlmostEqual(report.poly_mmd2, 0.0, 12)


if __name__ == "__main__":
    unittest.main()

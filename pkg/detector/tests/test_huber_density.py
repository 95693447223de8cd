import math

import numpy as np
from django.test import SimpleTestCase
from scipy import integrate

from detector.exceptions import DegenerateFitError, DomainError
from detector.huber_density import (
    FittedScale, _normalizer, fit_gaussian_sigma, fit_scale, fit_scale_newton, huber_log_density,
    huber_nll, lambda_coefficient, nll_log_k_derivatives, norm_const,
)
from detector.manifold import PenaltySpec, huber_fn


def grid_search_k(errors, delta):
    """Two-stage grid search over log k"""
    grid = np.linspace(math.log(1e-3), math.log(1e2), 4001)
    best = grid[np.argmin(huber_nll(errors, delta, np.exp(grid)))]
    step = grid[1] - grid[0]
    fine = np.linspace(best - 2 * step, best + 2 * step, 4001)
    return float(np.exp(fine[np.argmin(huber_nll(errors, delta, np.exp(fine)))]))


class NormConstTests(SimpleTestCase):

    def test_unit_parameters(self):
        self.assertAlmostEqual(norm_const(1.0, 1.0), 0.341961, delta=5e-6)

    def test_density_integrates_to_one(self):
        for delta in (0.5, 1.0, 2.0):
            for k in (0.5, 1.0, 2.0):
                def density(e):
                    return math.exp(huber_log_density([e], delta, k)[0])
                inner, _ = integrate.quad(density, 0.0, delta, epsabs=1e-12, epsrel=1e-12)
                outer, _ = integrate.quad(density, delta, np.inf, epsabs=1e-12, epsrel=1e-12)
                self.assertAlmostEqual(2.0 * (inner + outer), 1.0, delta=1e-6, msg=f'delta={delta} k={k}')

    def test_scaling_identity(self):
        for delta in (0.1, 0.5, 2.0):
            for k in (0.3, 1.7, 25.0):
                scaled = norm_const(k * delta, k)
                base = norm_const(delta, 1.0) / k
                self.assertLess(abs(scaled - base) / base, 1e-12)

    def test_normalizer_derivatives(self):
        delta, k, eps = 0.4, 0.8, 1e-6
        a0, a1, a2 = _normalizer(delta, k)
        self.assertAlmostEqual(a1, (_normalizer(delta, k + eps)[0] - _normalizer(delta, k - eps)[0]) / (2 * eps),
                               places=7)
        self.assertAlmostEqual(a2, (_normalizer(delta, k + eps)[1] - _normalizer(delta, k - eps)[1]) / (2 * eps),
                               places=6)

    def test_rejects_non_positive(self):
        with self.assertRaises(DomainError):
            norm_const(0.0, 1.0)
        with self.assertRaises(DomainError):
            norm_const(1.0, -1.0)


class NllTests(SimpleTestCase):

    def test_matches_log_density_sum(self):
        e = np.array([0.05, -0.3, 1.2])
        self.assertAlmostEqual(huber_nll(e, 0.2, 0.7), -huber_log_density(e, 0.2, 0.7).sum(), places=12)

    def test_log_k_derivatives(self):
        e = np.random.default_rng(0).standard_normal(30) * 0.4
        total = float(huber_fn(np.abs(e), 0.3).sum())
        t, eps = math.log(0.6), 1e-5
        value, grad, hess = nll_log_k_derivatives(e.size, total, 0.3, t)
        self.assertAlmostEqual(value, huber_nll(e, 0.3, 0.6), places=9)
        plus = nll_log_k_derivatives(e.size, total, 0.3, t + eps)
        minus = nll_log_k_derivatives(e.size, total, 0.3, t - eps)
        self.assertAlmostEqual(grad, (plus[0] - minus[0]) / (2 * eps), places=4)
        self.assertAlmostEqual(hess, (plus[1] - minus[1]) / (2 * eps), places=4)


class ScaleFitTests(SimpleTestCase):

    def test_newton_matches_grid_search(self):
        rng = np.random.default_rng(42)
        for trial in range(50):
            scale = rng.uniform(0.05, 2.0)
            delta = float(rng.choice([0.1, 0.5, 1.0]))
            errors = rng.standard_normal(int(rng.integers(20, 300))) * scale
            fit = fit_scale_newton(errors, delta)
            oracle = grid_search_k(errors, delta)
            self.assertLess(abs(fit.scale - oracle) / oracle, 1e-3, f'trial {trial}')
            self.assertFalse(fit.fallback)
            self.assertEqual(fit.at_boundary, '')

    def test_scale_equivariance(self):
        errors = np.random.default_rng(5).standard_normal(400) * 0.3
        base = fit_scale_newton(errors, 0.1)
        for c in (0.5, 4.0):
            scaled = fit_scale_newton(c * errors, c * 0.1)
            self.assertLess(abs(scaled.scale - c * base.scale) / (c * base.scale), 1e-6, f'c={c}')

    def test_sign_and_order_invariance(self):
        rng = np.random.default_rng(6)
        errors = rng.laplace(size=300) * 0.2
        base = fit_scale_newton(errors, 0.1)
        signs = rng.choice([-1.0, 1.0], size=errors.size)
        shuffled = fit_scale_newton(rng.permutation(errors * signs), 0.1)
        self.assertLess(abs(shuffled.scale - base.scale) / base.scale, 1e-9)

    def test_gaussian_limit(self):
        errors = np.random.default_rng(1).standard_normal(500) * 0.3
        fit = fit_scale_newton(errors, 1e3)
        expected = math.sqrt(np.mean(errors ** 2))
        self.assertLess(abs(fit.scale - expected) / expected, 1e-3)

    def test_all_zero_errors_degenerate(self):
        with self.assertRaises(DegenerateFitError):
            fit_scale_newton(np.zeros(10), 0.1)

    def test_too_few_errors(self):
        with self.assertRaises(DomainError):
            fit_scale_newton(np.array([0.2]), 0.1)

    def test_fit_is_stationary(self):
        errors = np.random.default_rng(2).laplace(size=200) * 0.2
        fit = fit_scale_newton(errors, 0.1)
        total = float(huber_fn(np.abs(errors), 0.1).sum())
        _, grad, hess = nll_log_k_derivatives(errors.size, total, 0.1, math.log(fit.scale))
        self.assertLess(abs(grad), 1e-6)
        self.assertGreater(hess, 0)
        self.assertGreater(fit.iterations, 0)

    def test_mse_dispatch(self):
        errors = np.array([[0.1, -0.2], [0.3, 0.0]])
        fit = fit_scale(errors, PenaltySpec('mse'))
        self.assertEqual(fit.kind, 'gaussian')
        self.assertAlmostEqual(fit.scale, fit_gaussian_sigma(errors), places=15)
        self.assertAlmostEqual(fit.scale, math.sqrt((0.01 + 0.04 + 0.09) / 4), places=15)

    def test_huber_dispatch_uses_penalty_delta(self):
        errors = np.random.default_rng(3).standard_normal(100) * 0.5
        fit = fit_scale(errors, PenaltySpec('huber', delta=0.25))
        self.assertEqual((fit.kind, fit.delta), ('huber', 0.25))


class LambdaTests(SimpleTestCase):

    def test_huber_rule(self):
        fit = FittedScale('huber', 0.5, 10, delta=0.1)
        self.assertEqual(lambda_coefficient(fit), 4.0)
        self.assertEqual(lambda_coefficient(fit, 2.0), 8.0)

    def test_gaussian_rule(self):
        fit = FittedScale('gaussian', 0.25, 10)
        self.assertEqual(lambda_coefficient(fit), 4.0)

    def test_non_positive_c_rejected(self):
        with self.assertRaises(DomainError):
            lambda_coefficient(FittedScale('gaussian', 0.25, 10), 0.0)

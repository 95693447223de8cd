"""
Scaled Huber density and maximum-likelihood scale estimation

    p(e; delta', k) = C(delta', k) * exp(-H_delta'(|e|) / k^2)

    1 / C(delta', k) = (2 k^2 / delta') exp(-delta'^2 / (2 k^2))
                       + sqrt(2 pi) k (2 Phi(delta' / k) - 1)

Phi is the standard normal CDF. k^2 plays the role of the variance; the
fitted k calibrates the penalty weight of the OOD score as lambda = C / k^2.
For the MSE penalty the residuals are instead fitted with a zero-mean
Gaussian and lambda = C / sigma.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .exceptions import DegenerateFitError, DomainError
from .manifold import huber_fn

logger = logging.getLogger(__name__)

K_MIN = 1e-8
K_MAX = 1e6
MAX_ITER = 100
STEP_TOL = 1e-10
GRAD_TOL = 1e-12

SQRT_2PI = math.sqrt(2.0 * math.pi)


def standard_normal_cdf(x):
    """Phi(x) through the complementary error function"""
    return 0.5 * special.erfc(-np.asarray(x, dtype=float) / math.sqrt(2.0))


def _check_positive(name, value):
    value = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(value)) or np.any(value <= 0):
        raise DomainError(f'{name} must be positive and finite, got {value}')


def _normalizer(delta, k):
    """1/C and its first two derivatives in k"""
    ratio = delta / k
    gauss = np.exp(-0.5 * ratio * ratio)
    central = 2.0 * standard_normal_cdf(ratio) - 1.0
    a0 = (2.0 * k * k / delta) * gauss + SQRT_2PI * k * central
    a1 = (4.0 * k / delta) * gauss + SQRT_2PI * central
    a2 = gauss * (4.0 / delta + 2.0 * delta / (k * k))
    return a0, a1, a2


def norm_const(delta, k):
    """Normalization constant C(delta', k) of the scaled Huber density"""
    _check_positive('delta', delta)
    _check_positive('k', k)
    return 1.0 / _normalizer(delta, k)[0]


def _abs_errors(errors, minimum=1):
    e = np.abs(np.asarray(errors, dtype=float)).ravel()
    if e.size < minimum:
        raise DomainError(f'need at least {minimum} errors, got {e.size}')
    if not np.all(np.isfinite(e)):
        raise DomainError('errors must be finite')
    return e


def huber_log_density(errors, delta, k):
    """Point-wise log p(e; delta', k)"""
    e = _abs_errors(errors)
    return np.log(norm_const(delta, k)) - huber_fn(e, delta) / (k * k)


def huber_nll(errors, delta, k):
    """
    -N log C(delta', k) + sum H_delta'(|e_n|) / k^2

    k may be an array (the NLL is then evaluated for every entry).
    """
    e = _abs_errors(errors)
    k = np.asarray(k, dtype=float)
    total = huber_fn(e, delta).sum()
    nll = -e.size * np.log(norm_const(delta, k)) + total / (k * k)
    return float(nll) if nll.ndim == 0 else nll


def nll_log_k_derivatives(n, huber_total, delta, t):
    """NLL and its first two derivatives with respect to t = log k"""
    k = math.exp(t)
    a0, a1, a2 = _normalizer(delta, k)
    q = a1 / a0
    value = n * math.log(a0) + huber_total / (k * k)
    grad = n * k * q - 2.0 * huber_total / (k * k)
    hess = n * k * (q + k * a2 / a0 - k * q * q) + 4.0 * huber_total / (k * k)
    return value, grad, hess


@dataclass(frozen=True)
class FittedScale:
    """
    Result of a scale fit.

    kind is 'huber' (scale = k, delta = delta') or 'gaussian'
    (scale = sigma_mse). at_boundary is '', 'lower' or 'upper'.
    """
    kind: str
    scale: float
    n: int
    delta: float = None
    nll: float = float('nan')
    iterations: int = 0
    at_boundary: str = ''
    fallback: bool = False

    def __post_init__(self):
        if self.kind not in ('huber', 'gaussian'):
            raise DomainError(f'unknown fit kind {self.kind!r}')
        if not self.scale > 0:
            raise DomainError(f'fitted scale must be positive, got {self.scale}')
        if self.n < 2:
            raise DomainError(f'a scale fit needs at least 2 errors, got {self.n}')


def fit_scale_newton(errors, delta, k_min=K_MIN, k_max=K_MAX, max_iter=MAX_ITER):
    """
    k* = argmin_k huber_nll(errors, delta', k) over [k_min, k_max].

    Newton on t = log k, safeguarded by a bracket on the sign of the
    derivative: a step that leaves the bracket, meets non-positive
    curvature or raises the NLL is replaced by bisection. If max_iter
    passes without convergence the result of a bounded scalar search is
    returned with fallback=True.
    """
    _check_positive('delta', delta)
    e = _abs_errors(errors, minimum=2)
    if not np.any(e > 0):
        raise DegenerateFitError('all errors are zero; the Huber scale is undefined')
    n = e.size
    total = float(huber_fn(e, delta).sum())

    def derivs(t):
        return nll_log_k_derivatives(n, total, delta, t)

    lo, hi = math.log(k_min), math.log(k_max)
    value_lo, grad_lo, _ = derivs(lo)
    if grad_lo >= 0:
        logger.warning('Huber scale fit hit the lower bound k=%g', k_min)
        return FittedScale('huber', k_min, n, delta=delta, nll=value_lo, at_boundary='lower')
    value_hi, grad_hi, _ = derivs(hi)
    if grad_hi <= 0:
        logger.warning('Huber scale fit hit the upper bound k=%g', k_max)
        return FittedScale('huber', k_max, n, delta=delta, nll=value_hi, at_boundary='upper')

    # Gaussian MLE as the starting point
    t = min(max(0.5 * math.log(float(np.mean(e * e))), lo), hi)
    for iteration in range(1, max_iter + 1):
        value, grad, hess = derivs(t)
        if abs(grad) < GRAD_TOL:
            break
        if grad < 0:
            lo = t
        else:
            hi = t
        t_new = t - grad / hess if hess > 0 else None
        if t_new is None or not lo < t_new < hi or derivs(t_new)[0] > value + 1e-12 * max(1.0, abs(value)):
            t_new = 0.5 * (lo + hi)
        step = t_new - t
        t = t_new
        logger.debug('newton iter %d: k=%.12g nll=%.12g grad=%.3g', iteration, math.exp(t), value, grad)
        if abs(step) < STEP_TOL * max(1.0, abs(t)):
            break
    else:
        result = optimize.minimize_scalar(lambda s: derivs(s)[0], bounds=(math.log(k_min), math.log(k_max)),
                                          method='bounded', options={'xatol': 1e-12, 'maxiter': 500})
        logger.warning('Newton did not converge in %d iterations; using bounded search', max_iter)
        return FittedScale('huber', math.exp(result.x), n, delta=delta, nll=float(result.fun),
                           iterations=max_iter, fallback=True)

    logger.info('Huber scale fit: k=%.10g after %d iterations (N=%d)', math.exp(t), iteration, n)
    return FittedScale('huber', math.exp(t), n, delta=delta, nll=derivs(t)[0], iterations=iteration)


def gaussian_nll(errors, sigma):
    """NLL of errors under N(0, sigma^2)"""
    e = _abs_errors(errors)
    sigma = np.asarray(sigma, dtype=float)
    nll = e.size * (np.log(sigma) + 0.5 * math.log(2.0 * math.pi)) + np.sum(e * e) / (2.0 * sigma * sigma)
    return float(nll) if nll.ndim == 0 else nll


def fit_gaussian_sigma(errors):
    """sigma_mse = sqrt(mean e^2), the zero-mean Gaussian MLE"""
    e = _abs_errors(errors, minimum=2)
    if not np.any(e > 0):
        raise DegenerateFitError('all errors are zero; sigma_mse is undefined')
    return math.sqrt(float(np.mean(e * e)))


def fit_scale(errors, spec):
    """Fit the distance distribution that matches the penalty kind"""
    if spec.kind == 'huber':
        return fit_scale_newton(errors, spec.delta)
    sigma = fit_gaussian_sigma(errors)
    n = np.asarray(errors).size
    return FittedScale('gaussian', sigma, n, nll=gaussian_nll(errors, sigma))


def lambda_coefficient(fit, c_const=1.0):
    """lambda = C / k^2 for a Huber fit, C / sigma_mse for a Gaussian fit"""
    if not c_const > 0:
        raise DomainError(f'C must be positive, got {c_const}')
    if fit.kind == 'huber':
        return c_const / (fit.scale * fit.scale)
    return c_const / fit.scale

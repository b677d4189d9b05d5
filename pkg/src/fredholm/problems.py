"""Canonical one-dimensional test problems.

Both instances use the Gaussian convolution kernel ``g(y|x) = N(y; x,
sigma_g^2)`` on the unit interval.  Their source densities put mass
outside [0, 1] only at the 1e-10 level or below, so restricting the
domains to the unit box changes nothing measurable; exact samplers redraw
the (practically nonexistent) outside draws.
"""
from __future__ import annotations

import math

import numpy as np

from .domain import DataSource, Domain, ForwardKernel, FredholmProblem

__all__ = [
    "analytic_gaussian_problem",
    "gaussian_mixture_problem",
    "GAUSSIAN_MIXTURE_MEAN",
    "GAUSSIAN_MIXTURE_VARIANCE",
]

# Moments of the two-component mixture truth, exact to the digits shown.
GAUSSIAN_MIXTURE_MEAN = 0.43333
GAUSSIAN_MIXTURE_VARIANCE = 0.010196


def _normal_pdf(x, mean, var):
    return np.exp(-0.5 * (x - mean) ** 2 / var) / math.sqrt(2.0 * math.pi * var)


def _squeeze_last(a):
    a = np.asarray(a, dtype=np.float64)
    return a[..., 0] if (a.ndim and a.shape[-1] == 1) else a


def _gaussian_convolution_kernel(sigma_g: float) -> ForwardKernel:
    var = sigma_g**2

    def evaluate(x, y):
        return _normal_pdf(_squeeze_last(y), _squeeze_last(x), var)

    return ForwardKernel(evaluate=evaluate)


def _boxed_sampler(draw, domain: Domain):
    """Redraw the vanishingly rare samples landing outside the box."""

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        out = draw(rng, n)
        bad = (out < domain.lower[0]) | (out > domain.upper[0])
        guard = 0
        while bad.any():
            guard += 1
            if guard > 1000:
                raise RuntimeError("sampler keeps leaving the domain box")
            out[bad] = draw(rng, int(bad.sum()))
            bad = (out < domain.lower[0]) | (out > domain.upper[0])
        return out[:, np.newaxis]

    return sampler


def analytic_gaussian_problem(mu: float = 0.5, sigma_f: float = 0.043,
                              sigma_g: float = 0.045) -> FredholmProblem:
    """Conjugate Gaussian instance on the unit interval.

    The data density is ``N(mu, sigma_f^2 + sigma_g^2)``, the unique
    solution is ``N(mu, sigma_f^2)``, and the closed-form oracle in
    :mod:`fredholm.analytic` describes the whole smoothed-recursion flow.
    """
    if sigma_f <= 0 or sigma_g <= 0:
        raise ValueError("standard deviations must be positive")
    unit = Domain(lower=[0.0], upper=[1.0])
    var_f = sigma_f**2
    var_h = sigma_f**2 + sigma_g**2
    sd_h = math.sqrt(var_h)

    def h_density(y):
        return _normal_pdf(_squeeze_last(y), mu, var_h)

    def truth(x):
        return _normal_pdf(_squeeze_last(x), mu, var_f)

    data = DataSource.from_sampler(
        _boxed_sampler(lambda rng, n: mu + sd_h * rng.standard_normal(n), unit),
        unit, density=h_density)
    return FredholmProblem(x_domain=unit, y_domain=unit,
                           kernel=_gaussian_convolution_kernel(sigma_g),
                           data=data, truth=truth)


def gaussian_mixture_problem() -> FredholmProblem:
    """Two-component Gaussian mixture deconvolution benchmark.

    Truth: ``f = 1/3 N(0.3, 0.015^2) + 2/3 N(0.5, 0.043^2)`` observed
    through ``g = N(x, 0.045^2)``, so the data density is the component-wise
    widened mixture.  Truth mean 0.43333, truth variance 0.010196.
    """
    unit = Domain(lower=[0.0], upper=[1.0])
    sigma_g = 0.045
    means = np.array([0.3, 0.5])
    f_vars = np.array([0.015**2, 0.043**2])
    h_vars = f_vars + sigma_g**2
    mix = np.array([1.0 / 3.0, 2.0 / 3.0])

    def truth(x):
        xs = _squeeze_last(x)
        return (mix[0] * _normal_pdf(xs, means[0], f_vars[0])
                + mix[1] * _normal_pdf(xs, means[1], f_vars[1]))

    def h_density(y):
        ys = _squeeze_last(y)
        return (mix[0] * _normal_pdf(ys, means[0], h_vars[0])
                + mix[1] * _normal_pdf(ys, means[1], h_vars[1]))

    h_sds = np.sqrt(h_vars)

    def draw(rng: np.random.Generator, n: int) -> np.ndarray:
        comp = (rng.random(n) < mix[1]).astype(np.intp)
        return means[comp] + h_sds[comp] * rng.standard_normal(n)

    data = DataSource.from_sampler(_boxed_sampler(draw, unit), unit, density=h_density)
    return FredholmProblem(x_domain=unit, y_domain=unit,
                           kernel=_gaussian_convolution_kernel(sigma_g),
                           data=data, truth=truth)

import math

import numpy as np
import pytest
from scipy.stats import norm

from fredholm import (
    AnalyticGaussianSpec,
    Domain,
    ems_fixed_point_variance,
    exact_potential,
    kl_at_fixed_point,
    kl_numeric,
)
from fredholm.analytic import (
    _fixed_point_cubic,
    ems_variance_step,
    exact_potential_for_run,
    run_variance_schedule,
)

PAPER_SPEC = dict(mu=0.5, sigma_f2=0.043**2, sigma_g2=0.045**2)


def brute_force_ems_variance(epsilon, sigma_f=0.043, sigma_g=0.045, mu=0.5,
                             n_nodes=1200, iterations=400):
    """Independent oracle: iterate the smoothed recursion by trapezoid
    quadrature on [0, 1] (truncated smoother) and read off the variance."""
    x = np.linspace(0.0, 1.0, n_nodes)
    dx = x[1] - x[0]
    w = np.full(n_nodes, dx)
    w[0] *= 0.5
    w[-1] *= 0.5
    g = norm.pdf(x[None, :], loc=x[:, None], scale=sigma_g)
    h = norm.pdf(x, loc=mu, scale=math.hypot(sigma_f, sigma_g))
    T = norm.pdf(x[None, :], loc=x[:, None], scale=epsilon)
    Z = norm.cdf((1.0 - x) / epsilon) - norm.cdf(-x / epsilon)
    K = T / Z[:, None]
    f = np.ones(n_nodes)
    for _ in range(iterations):
        h_n = (f * w) @ g
        reweighted = f * (g @ (h / h_n * w))
        f = (reweighted * w) @ K
        f /= (f * w).sum()
    mean = (f * x * w).sum()
    return (f * x * x * w).sum() - mean * mean


class TestFixedPointVariance:
    def test_epsilon_zero_recovers_sigma_f2(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        assert ems_fixed_point_variance(spec) == pytest.approx(0.043**2, rel=1e-12)

    def test_vanishing_kernel_limit(self):
        # sigma_g -> 0 with epsilon = 0: root -> sigma_h2
        spec = AnalyticGaussianSpec(mu=0.5, sigma_f2=0.043**2, sigma_g2=1e-12, epsilon=0.0)
        assert ems_fixed_point_variance(spec) == pytest.approx(spec.sigma_h2, rel=1e-6)

    @pytest.mark.parametrize("eps", [1e-3, 1e-2, 10**-1.5, 5e-2])
    def test_cubic_residual_below_1e12(self, eps):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=eps)
        root = ems_fixed_point_variance(spec)
        c3, c2, c1, c0 = _fixed_point_cubic(spec)
        residual = ((c3 * root + c2) * root + c1) * root + c0
        assert abs(residual) < 1e-12

    @pytest.mark.parametrize("eps", [0.01, 0.05])
    def test_root_matches_brute_force_recursion(self, eps):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=eps)
        root = ems_fixed_point_variance(spec)
        oracle = brute_force_ems_variance(eps)
        assert root == pytest.approx(oracle, abs=1e-8)

    def test_root_monotone_in_epsilon(self):
        roots = [ems_fixed_point_variance(AnalyticGaussianSpec(**PAPER_SPEC, epsilon=e))
                 for e in np.linspace(0.0, 0.2, 21)]
        assert np.all(np.diff(roots) > 0)

    def test_root_continuous_in_epsilon(self):
        eps = np.linspace(1e-4, 0.1, 200)
        roots = np.array([ems_fixed_point_variance(AnalyticGaussianSpec(**PAPER_SPEC, epsilon=e))
                          for e in eps])
        assert np.max(np.abs(np.diff(roots))) < 2e-4


class TestKlAtFixedPoint:
    def test_zero_at_matched_variance(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        assert kl_at_fixed_point(spec, spec.sigma_f2) == pytest.approx(0.0, abs=1e-15)

    def test_matches_numeric_quadrature(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.02)
        sigma_ems2 = 2.0 * spec.sigma_f2 + spec.sigma_g2
        formula = kl_at_fixed_point(spec, sigma_ems2)
        dom = Domain(lower=[0.0], upper=[1.0])
        h = lambda y: norm.pdf(np.asarray(y)[..., 0], 0.5, math.sqrt(spec.sigma_h2))
        h_hat = lambda y: norm.pdf(np.asarray(y)[..., 0], 0.5,
                                   math.sqrt(sigma_ems2 + spec.sigma_g2))
        numeric = kl_numeric(h, h_hat, dom, nodes=100_000)
        assert formula == pytest.approx(numeric, abs=1e-6)

    def test_increases_away_from_matched_variance(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        base = spec.sigma_f2
        deltas = np.array([0.0, 0.2, 0.5, 1.0]) * base
        above = [kl_at_fixed_point(spec, base + d) for d in deltas]
        assert np.all(np.diff(above) > 0)
        below = [kl_at_fixed_point(spec, base - d) for d in deltas[:-1]]
        assert np.all(np.diff(below) > 0)

    def test_kl_monotone_in_epsilon_through_root(self):
        kls = []
        for e in np.linspace(1e-4, 0.2, 25):
            spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=e)
            kls.append(kl_at_fixed_point(spec, ems_fixed_point_variance(spec)))
        assert np.all(np.diff(kls) > 0)


class TestExactPotential:
    def test_degenerate_iterate_gives_unit_ratio(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        y = np.linspace(0.1, 0.9, 9)
        vals = exact_potential(spec, 1e-16, np.full_like(y, spec.mu), y)
        np.testing.assert_allclose(vals, 1.0, rtol=1e-10)

    def test_peak_ratio_at_center(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        s_n2 = 0.043**2
        got = exact_potential(spec, s_n2, spec.mu, spec.mu)
        want = math.sqrt((spec.sigma_g2 + s_n2) / spec.sigma_g2)
        assert got == pytest.approx(want, rel=1e-12)

    def test_matches_direct_density_ratio(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.0)
        s_n2 = 0.043**2
        got = exact_potential(spec, s_n2, 0.4, 0.5)
        want = norm.pdf(0.5, 0.4, 0.045) / norm.pdf(0.5, 0.5, math.sqrt(0.045**2 + s_n2))
        assert got == pytest.approx(want, rel=1e-12)


class TestVarianceSchedule:
    def test_step_fixed_point_is_root(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.03)
        root = ems_fixed_point_variance(spec)
        assert ems_variance_step(spec, root) == pytest.approx(root, rel=1e-10)

    def test_schedule_converges_to_root(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.03)
        sched = run_variance_schedule(spec, 1e-3, 200)
        assert sched[-1] == pytest.approx(ems_fixed_point_variance(spec), rel=1e-8)

    def test_first_entry_adds_smoothing_only(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.05)
        sched = run_variance_schedule(spec, 2e-3, 3)
        assert sched[0] == pytest.approx(2e-3 + 0.05**2, rel=1e-14)

    def test_potential_for_run_squeezes_points(self):
        spec = AnalyticGaussianSpec(**PAPER_SPEC, epsilon=0.05)
        pot = exact_potential_for_run(spec, spec.sigma_f2, 5)
        x = np.full((7, 1, 1), 0.5)
        y = np.linspace(0.3, 0.7, 3).reshape(1, 3, 1)
        out = pot(x, y, 2)
        assert out.shape == (7, 3)
        direct = exact_potential(spec, spec.sigma_f2 + 0.05**2, 0.5, 0.3)
        assert out[0, 0] == pytest.approx(direct, rel=1e-12)

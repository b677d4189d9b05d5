import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chi2, truncnorm

from fredholm import (
    DataSource,
    Domain,
    EmsConfig,
    ForwardKernel,
    FredholmProblem,
    ParticleCloud,
    PotentialTable,
    SmoothingKernel,
    average_estimates,
    compute_potentials,
    effective_sample_size,
    estimate_density,
    init_cloud,
    mixture_density_at,
    mutate,
    normalize_weights,
    plugin_bandwidth,
    resample_multinomial,
    run,
    step,
)
from fredholm.domain import trapezoid_rule


def constant_kernel(value=1.0):
    return ForwardKernel(evaluate=lambda x, y: np.full(
        np.broadcast(np.asarray(x)[..., 0], np.asarray(y)[..., 0]).shape, value))


def gaussian_kernel(sd):
    def evaluate(x, y):
        d = np.asarray(y)[..., 0] - np.asarray(x)[..., 0]
        return np.exp(-0.5 * d * d / sd**2) / math.sqrt(2 * math.pi * sd**2)
    return ForwardKernel(evaluate=evaluate)


def fixed_data(points, domain):
    """Data source returning a fixed array regardless of the rng (oracle hook)."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))

    def sampler(rng, n):
        assert n == pts.shape[0], "fixed data source asked for unexpected batch"
        return pts

    return DataSource.from_sampler(sampler, domain)


def uniform_cloud(n, rng, dim=1, iteration=1):
    x = rng.random((n, dim))
    y = rng.random((n, dim))
    return ParticleCloud(x, y, np.full(n, 1.0 / n), iteration)


class TestInitCloud:
    def test_three_particle_contract(self, analytic_problem, rng):
        cfg = EmsConfig(n_particles=3, n_iterations=1, epsilon=0.1)
        cloud = init_cloud(analytic_problem, cfg, rng)
        assert cloud.n_particles == 3
        assert analytic_problem.x_domain.contains(cloud.x_positions).all()
        np.testing.assert_allclose(cloud.weights, 1.0 / 3.0)
        assert cloud.iteration == 1

    def test_dirac_initial_density(self, analytic_problem, rng):
        cfg = EmsConfig(n_particles=16, n_iterations=1, epsilon=0.1,
                        initial_density=lambda r, n: np.full((n, 1), 0.5))
        cloud = init_cloud(analytic_problem, cfg, rng)
        assert np.all(cloud.x_positions == 0.5)

    def test_uniform_init_mean(self, analytic_problem, rng):
        n = 100_000
        cfg = EmsConfig(n_particles=n, n_iterations=1, epsilon=0.1)
        cloud = init_cloud(analytic_problem, cfg, rng)
        tol = 4.0 / math.sqrt(12.0 * n)
        assert abs(cloud.x_positions.mean() - 0.5) < tol

    def test_initial_density_outside_domain_rejected(self, analytic_problem, rng):
        cfg = EmsConfig(n_particles=4, n_iterations=1, epsilon=0.1,
                        initial_density=lambda r, n: np.full((n, 1), 1.5))
        with pytest.raises(ValueError):
            init_cloud(analytic_problem, cfg, rng)


class TestMutate:
    def test_dirac_kernel_keeps_positions(self, unit_domain, rng):
        cloud = uniform_cloud(64, rng)
        kernel = SmoothingKernel(epsilon=1e-300, domain=unit_domain)
        data = fixed_data(np.full((64, 1), 0.5), unit_domain)
        out = mutate(cloud, kernel, data, rng)
        np.testing.assert_array_equal(out.x_positions, cloud.x_positions)
        assert out.iteration == cloud.iteration + 1

    def test_moved_positions_inside_domain(self, unit_domain, rng):
        cloud = uniform_cloud(512, rng)
        kernel = SmoothingKernel(epsilon=0.4, domain=unit_domain)
        data = DataSource.from_sampler(lambda r, n: r.random((n, 1)), unit_domain)
        out = mutate(cloud, kernel, data, rng)
        assert unit_domain.contains(out.x_positions).all()

    def test_spread_matches_truncated_normal(self, unit_domain, rng):
        n = 10_000
        eps = 0.1
        cloud = ParticleCloud(np.full((n, 1), 0.5), rng.random((n, 1)),
                              np.full(n, 1.0 / n), 1)
        kernel = SmoothingKernel(epsilon=eps, domain=unit_domain)
        data = DataSource.from_sampler(lambda r, m: r.random((m, 1)), unit_domain)
        out = mutate(cloud, kernel, data, rng)
        oracle = truncnorm(a=-0.5 / eps, b=0.5 / eps, loc=0.5, scale=eps)
        assert abs(out.x_positions.std() - oracle.std()) / oracle.std() < 0.05


class TestMixtureDensity:
    def test_single_particle(self, unit_domain, rng):
        cloud = ParticleCloud(np.array([[0.4]]), np.array([[0.5]]), np.array([1.0]), 1)
        g = gaussian_kernel(0.1)
        got = mixture_density_at(cloud, g, np.array([0.7]))
        assert got == pytest.approx(g.evaluate(np.array([[0.4]]), np.array([[0.7]])).item())

    def test_constant_kernel(self, rng):
        cloud = uniform_cloud(37, rng)
        got = mixture_density_at(cloud, constant_kernel(2.5), np.array([0.3]))
        assert got == pytest.approx(2.5)

    def test_matches_direct_sum(self, rng):
        xs = np.array([[0.1], [0.3], [0.5], [0.7], [0.9]])
        cloud = ParticleCloud(xs, xs, np.full(5, 0.2), 1)
        g = gaussian_kernel(0.2)
        y = 0.42
        direct = np.mean([g.evaluate(x[None, :], np.array([[y]])).item() for x in xs])
        assert mixture_density_at(cloud, g, np.array([y])) == pytest.approx(direct, rel=1e-14)

    def test_weighted_cloud_uses_weights(self, rng):
        xs = np.array([[0.2], [0.8]])
        w = np.array([0.25, 0.75])
        cloud = ParticleCloud(xs, xs, w, 1)
        g = gaussian_kernel(0.1)
        direct = (w[:, None] * g.evaluate(xs[:, None, :], np.array([[[0.5]]]))).sum()
        assert mixture_density_at(cloud, g, np.array([0.5])) == pytest.approx(float(direct))

    def test_chunking_is_order_stable(self, rng):
        cloud = uniform_cloud(1000, rng)
        g = gaussian_kernel(0.3)
        a = mixture_density_at(cloud, g, np.array([0.5]), chunk_size=1000)
        b = mixture_density_at(cloud, g, np.array([0.5]), chunk_size=7)
        assert a == pytest.approx(b, rel=1e-15)

    def test_zero_kernel_raises(self, rng):
        cloud = uniform_cloud(10, rng)
        with pytest.raises(FloatingPointError):
            mixture_density_at(cloud, constant_kernel(0.0), np.array([0.5]))


class TestComputePotentials:
    def test_single_particle_self_normalizes(self, unit_domain, rng):
        cloud = ParticleCloud(np.array([[0.5]]), np.array([[0.5]]), np.array([1.0]), 1)
        data = fixed_data(rng.random((7, 1)), unit_domain)
        table = compute_potentials(cloud, gaussian_kernel(0.1), 7, data, rng)
        assert table.values[0] == pytest.approx(7.0, rel=1e-12)

    def test_constant_kernel_gives_uniform_weights(self, unit_domain, rng):
        cloud = uniform_cloud(23, rng)
        data = fixed_data(rng.random((5, 1)), unit_domain)
        table = compute_potentials(cloud, constant_kernel(3.0), 5, data, rng)
        np.testing.assert_allclose(table.values, 5.0, rtol=1e-12)
        np.testing.assert_allclose(normalize_weights(table), 1.0 / 23.0, rtol=1e-12)

    def test_matches_brute_force_double_loop(self, unit_domain, rng):
        xs = np.array([[0.2], [0.4], [0.6], [0.8]])
        cloud = ParticleCloud(xs, xs, np.full(4, 0.25), 1)
        y_fixed = np.array([[0.35], [0.65]])
        data = fixed_data(y_fixed, unit_domain)
        g = gaussian_kernel(0.15)
        table = compute_potentials(cloud, g, 2, data, rng)
        expected = np.zeros(4)
        for j in range(2):
            h_j = np.mean([g.evaluate(x[None, :], y_fixed[j][None, :]).item() for x in xs])
            for i in range(4):
                expected[i] += g.evaluate(xs[i][None, :], y_fixed[j][None, :]).item() / h_j
        np.testing.assert_allclose(table.values, expected, rtol=1e-12)
        np.testing.assert_allclose(table.mixture_cache.shape, (2,))

    def test_fixed_chunk_size_is_bitwise_deterministic(self, unit_domain, rng):
        cloud = uniform_cloud(50, rng)
        y_fixed = np.random.default_rng(3).random((64, 1))
        g = gaussian_kernel(0.2)
        t1 = compute_potentials(cloud, g, 64, fixed_data(y_fixed, unit_domain), rng, chunk_size=16)
        t2 = compute_potentials(cloud, g, 64, fixed_data(y_fixed, unit_domain), rng, chunk_size=16)
        np.testing.assert_array_equal(t1.values, t2.values)
        # a different chunking only reorders the sum: equal to rounding error
        t3 = compute_potentials(cloud, g, 64, fixed_data(y_fixed, unit_domain), rng, chunk_size=5)
        np.testing.assert_allclose(t3.values, t1.values, rtol=1e-12)

    def test_bounded_kernel_respects_envelope(self, unit_domain, rng):
        # g in [0.8, 1.2] so m_g = 1.25 bounds hold with room to spare
        def evaluate(x, y):
            return 0.8 + 0.4 * np.asarray(x)[..., 0] * np.asarray(y)[..., 0]

        kernel = ForwardKernel(evaluate=evaluate, lower_bound=0.8, upper_bound=1.25)
        cloud = uniform_cloud(200, rng)
        data = DataSource.from_sampler(lambda r, n: r.random((n, 1)), unit_domain)
        m = 64
        table = compute_potentials(cloud, kernel, m, data, rng)
        per_replicate = table.values / m
        m_g = 1.25
        assert np.all(per_replicate >= 1.0 / m_g**2 - 1e-12)
        assert np.all(per_replicate <= m_g**2 + 1e-12)

    def test_support_violation_raises(self, unit_domain, rng):
        cloud = uniform_cloud(6, rng)
        data = fixed_data(np.array([[0.5]]), unit_domain)
        with pytest.raises(FloatingPointError):
            compute_potentials(cloud, constant_kernel(0.0), 1, data, rng)

    def test_unsupported_replicates_dropped_with_warning(self, unit_domain, rng):
        # compact-support kernel: data draws beyond any particle's window
        # contribute nothing and are dropped rather than crashing the run
        def evaluate(x, y):
            d = np.abs(np.asarray(y)[..., 0] - np.asarray(x)[..., 0])
            return np.where(d <= 0.05, 10.0, 0.0)

        kernel = ForwardKernel(evaluate=evaluate)
        xs = np.full((4, 1), 0.2)
        cloud = ParticleCloud(xs, xs, np.full(4, 0.25), 1)
        data = fixed_data(np.array([[0.21], [0.9]]), unit_domain)
        with pytest.warns(RuntimeWarning, match="dropped"):
            table = compute_potentials(cloud, kernel, 2, data, rng)
        np.testing.assert_allclose(table.values, 1.0)  # only the supported draw counts
        assert table.mixture_cache[1] == 0.0


class TestNormalizeWeights:
    def test_uniform_values(self):
        np.testing.assert_allclose(normalize_weights(np.ones(4)), 0.25)

    def test_dominant_value(self):
        w = normalize_weights(np.array([2.0, 1e-30, 1e-30]))
        assert w[0] == pytest.approx(1.0)

    def test_simple_arithmetic(self):
        np.testing.assert_allclose(normalize_weights(np.array([1.0, 2.0, 3.0])),
                                   np.array([1, 2, 3]) / 6.0, rtol=1e-15)

    def test_sum_exactly_one(self, rng):
        for _ in range(20):
            w = normalize_weights(rng.random(5000) * 10.0**rng.integers(-3, 3))
            assert abs(w.sum() - 1.0) <= 1e-12

    def test_all_zero_rejected(self):
        with pytest.raises(ZeroDivisionError):
            normalize_weights(np.zeros(5))


class TestEffectiveSampleSize:
    def test_uniform_values_give_n(self):
        assert effective_sample_size(np.ones(100)) == pytest.approx(100.0)

    def test_single_dominant_particle(self):
        v = np.full(50, 1e-30)
        v[7] = 1.0
        assert effective_sample_size(v) == pytest.approx(1.0, abs=1e-9)

    def test_two_dominant_particles(self):
        v = np.full(64, 1e-30)
        v[3] = v[11] = 1.0
        assert effective_sample_size(v) == pytest.approx(2.0, abs=1e-9)

    def test_scale_invariance_at_1e7(self, rng):
        v = rng.random(128) + 1e-3
        assert effective_sample_size(v * 1e7) == pytest.approx(
            effective_sample_size(v), rel=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.floats(min_value=1e-12, max_value=1e12), min_size=1, max_size=64),
           st.floats(min_value=1e-6, max_value=1e6))
    def test_bounds_and_scaling_property(self, values, scale):
        v = np.asarray(values)
        ess = effective_sample_size(v)
        assert 1.0 - 1e-9 <= ess <= len(values) + 1e-9
        assert effective_sample_size(v * scale) == pytest.approx(ess, rel=1e-9)


class TestResampling:
    def test_degenerate_weight_copies_one_particle(self, rng):
        cloud = uniform_cloud(32, rng)
        w = np.zeros(32)
        w[5] = 1.0
        out = resample_multinomial(cloud, w, rng)
        assert np.all(out.x_positions == cloud.x_positions[5])
        np.testing.assert_allclose(out.weights, 1.0 / 32.0)

    def test_uniform_weights_chi_square(self, rng):
        n = 64
        reps = 1000
        cloud = uniform_cloud(n, rng)
        w = np.full(n, 1.0 / n)
        counts = np.zeros(n)
        lookup = {float(v): i for i, v in enumerate(cloud.x_positions[:, 0])}
        for _ in range(reps):
            out = resample_multinomial(cloud, w, rng)
            for v in out.x_positions[:, 0]:
                counts[lookup[float(v)]] += 1
        expected = reps * n / n
        stat = float(((counts - expected) ** 2 / expected).sum())
        assert stat < chi2.ppf(0.999, df=n - 1)

    def test_binomial_moments_for_skewed_weights(self, rng):
        n = 10_000
        cloud = uniform_cloud(n, rng)
        w = np.zeros(n)
        w[0] = 0.9
        w[1:] = 0.1 / (n - 1)
        out = resample_multinomial(cloud, w, rng)
        count0 = int(np.sum(out.x_positions[:, 0] == cloud.x_positions[0, 0]))
        assert abs(count0 - 9000) < 4 * math.sqrt(n * 0.9 * 0.1)

    def test_unbiased_offspring_counts(self, rng):
        n = 16
        reps = 1000
        cloud = uniform_cloud(n, rng)
        w = normalize_weights(rng.random(n) + 0.05)
        counts = np.zeros(n)
        lookup = {float(v): i for i, v in enumerate(cloud.x_positions[:, 0])}
        for _ in range(reps):
            out = resample_multinomial(cloud, w, rng)
            for v in out.x_positions[:, 0]:
                counts[lookup[float(v)]] += 1
        means = counts / reps
        se = np.sqrt(n * w * (1 - w) / reps)
        assert np.all(np.abs(means - n * w) < 4 * se + 1e-9)


class TestPluginBandwidth:
    def test_1d_formula(self, rng):
        n = 4000
        x = rng.standard_normal((n, 1))
        x = (x - x.mean()) / x.std()  # unit sample variance
        cloud = ParticleCloud(np.clip(x, -10, 10) * 0.01 + 0.5,
                              rng.random((n, 1)), np.full(n, 1.0 / n), 1)
        # rebuild with exactly the normalized sample to keep variance exact
        s_n, var = plugin_bandwidth(cloud, np.full(n, 1.0 / n), float(n))
        assert s_n == pytest.approx((4.0 / 3.0) ** 0.2 * n ** -0.2, rel=1e-12)

    def test_uniform_weights_match_numpy_cov(self, rng):
        n = 500
        x = rng.random((n, 2))
        cloud = ParticleCloud(x, x, np.full(n, 1.0 / n), 1)
        _, var = plugin_bandwidth(cloud, np.full(n, 1.0 / n), float(n))
        np.testing.assert_allclose(var, x.var(axis=0), rtol=1e-12)

    def test_scale_equivariance(self, rng):
        n = 300
        x = rng.random((n, 1))
        w = normalize_weights(rng.random(n) + 0.1)
        c1 = ParticleCloud(x, x, np.full(n, 1.0 / n), 1)
        c2 = ParticleCloud(3.0 * x, x, np.full(n, 1.0 / n), 1)
        ess = effective_sample_size(w)
        s1, v1 = plugin_bandwidth(c1, w, ess)
        s2, v2 = plugin_bandwidth(c2, w, ess)
        assert s2 == pytest.approx(s1, rel=1e-12)
        np.testing.assert_allclose(np.sqrt(v2), 3.0 * np.sqrt(v1), rtol=1e-12)

    def test_zero_variance_fallback_warns(self, rng):
        n = 50
        cloud = ParticleCloud(np.full((n, 1), 0.5), rng.random((n, 1)),
                              np.full(n, 1.0 / n), 1)
        with pytest.warns(RuntimeWarning):
            s_n, var = plugin_bandwidth(cloud, np.full(n, 1.0 / n), float(n))
        assert var[0] > 0


class TestDensityEstimate:
    def test_single_component_is_gaussian(self, unit_domain, rng):
        cloud = ParticleCloud(np.array([[0.5]]), np.array([[0.5]]), np.array([1.0]), 1)
        kernel = SmoothingKernel(epsilon=0.02, domain=unit_domain)
        est = estimate_density(cloud, np.array([1.0]), kernel, (0.3, np.array([0.01])))
        var = 0.3**2 * 0.01 + 0.02**2
        from scipy.stats import norm
        xs = np.linspace(0.2, 0.8, 11)
        np.testing.assert_allclose(est(xs[:, None]),
                                   norm.pdf(xs, 0.5, math.sqrt(var)), rtol=1e-10)
        np.testing.assert_allclose(est.variance(), [var], rtol=1e-12)

    def test_vanishing_epsilon_gives_pure_kde(self, unit_domain, rng):
        n = 20
        x = rng.random((n, 1)) * 0.5 + 0.25
        cloud = ParticleCloud(x, x, np.full(n, 1.0 / n), 1)
        kernel = SmoothingKernel(epsilon=1e-12, domain=unit_domain)
        w = np.full(n, 1.0 / n)
        s_n, var = plugin_bandwidth(cloud, w, float(n))
        est = estimate_density(cloud, w, kernel, (s_n, var))
        np.testing.assert_allclose(est.component_variance[:, 0], s_n**2 * var[0],
                                   rtol=1e-6)

    def test_mixture_integrates_to_one(self, unit_domain, rng):
        n = 256
        x = rng.random((n, 1)) * 0.4 + 0.3
        cloud = ParticleCloud(x, x, np.full(n, 1.0 / n), 1)
        kernel = SmoothingKernel(epsilon=0.01, domain=unit_domain)
        w = normalize_weights(rng.random(n) + 0.2)
        est = estimate_density(cloud, w, kernel, plugin_bandwidth(cloud, w, 200.0))
        pts, quad_w = trapezoid_rule(unit_domain, 10_000)
        inside = float(quad_w @ est(pts).ravel())
        assert inside >= 0.99
        assert est.mass_in_domain() == pytest.approx(inside, abs=1e-6)

    def test_average_estimates_pools_mixtures(self, unit_domain):
        kernel = SmoothingKernel(epsilon=0.02, domain=unit_domain)
        c1 = ParticleCloud(np.array([[0.3]]), np.array([[0.3]]), np.array([1.0]), 1)
        c2 = ParticleCloud(np.array([[0.7]]), np.array([[0.7]]), np.array([1.0]), 2)
        e1 = estimate_density(c1, np.array([1.0]), kernel, (0.1, np.array([0.01])))
        e2 = estimate_density(c2, np.array([1.0]), kernel, (0.1, np.array([0.01])))
        pooled = average_estimates([e1, e2])
        assert pooled.mean()[0] == pytest.approx(0.5)
        xs = np.array([[0.4]])
        assert pooled(xs)[0] == pytest.approx(0.5 * (e1(xs)[0] + e2(xs)[0]), rel=1e-12)


class TestStepAndRun:
    def test_step_contract(self, mixture_problem, rng):
        cfg = EmsConfig(n_particles=200, n_iterations=1, epsilon=1e-2, seed=0)
        cloud = init_cloud(mixture_problem, cfg, rng)
        out, est, diag = step(cloud, mixture_problem, cfg, rng)
        assert 1.0 <= diag.ess <= cfg.n_particles
        assert abs(out.weights.sum() - 1.0) < 1e-12
        assert out.iteration == 2
        assert est.mass_in_domain() > 0.95

    def test_exact_potential_step_contract(self, analytic_problem, rng):
        from fredholm import AnalyticGaussianSpec, exact_potential_for_run
        spec = AnalyticGaussianSpec(mu=0.5, sigma_f2=0.043**2, sigma_g2=0.045**2,
                                    epsilon=1e-2)
        pot = exact_potential_for_run(spec, spec.sigma_f2, 3)
        cfg = EmsConfig(
            n_particles=150, n_iterations=3, epsilon=1e-2, seed=0,
            initial_density=lambda r, n: np.clip(
                0.5 + 0.043 * r.standard_normal(n), 0, 1)[:, None])
        cloud = init_cloud(analytic_problem, cfg, rng)
        out, est, diag = step(cloud, analytic_problem, cfg, rng, exact_potential=pot)
        assert 1.0 <= diag.ess <= cfg.n_particles
        assert abs(out.weights.sum() - 1.0) < 1e-12

    def test_same_seed_bit_identical(self, mixture_problem):
        cfg = EmsConfig(n_particles=300, n_iterations=5, epsilon=1e-3, seed=123)
        r1 = run(mixture_problem, cfg)
        r2 = run(mixture_problem, cfg)
        np.testing.assert_array_equal(r1.estimate.centers, r2.estimate.centers)
        np.testing.assert_array_equal(r1.estimate.mixture_weights,
                                      r2.estimate.mixture_weights)
        np.testing.assert_array_equal(r1.estimate.component_variance,
                                      r2.estimate.component_variance)
        assert [d.ess for d in r1.diagnostics] == [d.ess for d in r2.diagnostics]

    def test_chunk_size_only_reorders_rounding(self, mixture_problem):
        base = dict(n_particles=128, n_iterations=4, epsilon=1e-3, seed=9)
        r1 = run(mixture_problem, EmsConfig(**base, chunk_size=512))
        r2 = run(mixture_problem, EmsConfig(**base, chunk_size=17))
        np.testing.assert_array_equal(r1.estimate.centers, r2.estimate.centers)
        np.testing.assert_allclose(r1.estimate.mixture_weights,
                                   r2.estimate.mixture_weights, rtol=1e-10)

    def test_single_iteration_equals_one_step(self, mixture_problem):
        cfg = EmsConfig(n_particles=101, n_iterations=1, epsilon=1e-2, seed=5)
        res = run(mixture_problem, cfg)
        rng = np.random.default_rng(cfg.seed)
        cloud = init_cloud(mixture_problem, cfg, rng)
        _, est, diag = step(cloud, mixture_problem, cfg, rng)
        np.testing.assert_array_equal(res.estimate.centers, est.centers)
        assert res.diagnostics[0].ess == diag.ess

    def test_run_keeps_estimates_when_asked(self, mixture_problem):
        cfg = EmsConfig(n_particles=64, n_iterations=6, epsilon=1e-2, seed=2)
        res = run(mixture_problem, cfg, keep_estimates=True)
        assert len(res.estimates) == 6
        assert res.estimates[-1] is res.estimate

    def test_run_average_last(self, mixture_problem):
        cfg = EmsConfig(n_particles=64, n_iterations=6, epsilon=1e-2, seed=2)
        res = run(mixture_problem, cfg, average_last=3)
        assert res.estimate.centers.shape[0] == 3 * 64

    def test_constant_kernel_keeps_uniform_weights(self, unit_domain, rng):
        data = DataSource.from_sampler(lambda r, n: r.random((n, 1)), unit_domain)
        prob = FredholmProblem(unit_domain, unit_domain, constant_kernel(2.0), data)
        cfg = EmsConfig(n_particles=97, n_iterations=1, epsilon=0.05, seed=0)
        cloud = init_cloud(prob, cfg, rng)
        out, est, diag = step(cloud, prob, cfg, rng)
        assert diag.ess == pytest.approx(97.0)
        np.testing.assert_allclose(out.weights, 1.0 / 97.0, rtol=1e-12)


class TestCloudValidation:
    def test_weights_must_sum_to_one(self, rng):
        with pytest.raises(ValueError):
            ParticleCloud(rng.random((4, 1)), rng.random((4, 1)),
                          np.array([0.5, 0.5, 0.5, 0.5]), 1)

    def test_rejects_negative_weights(self, rng):
        with pytest.raises(ValueError):
            ParticleCloud(rng.random((2, 1)), rng.random((2, 1)),
                          np.array([1.5, -0.5]), 1)

    def test_cloud_is_immutable(self, rng):
        cloud = uniform_cloud(8, rng)
        with pytest.raises(ValueError):
            cloud.x_positions[0, 0] = 2.0

    def test_potential_table_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PotentialTable(np.array([1.0, np.inf]))
        with pytest.raises(ValueError):
            PotentialTable(np.array([1.0, -0.5]))
        with pytest.raises(ValueError):
            PotentialTable(np.zeros(3))

"""Measure the Monte Carlo rate of the idealized particle solver.

On the conjugate Gaussian instance the importance weights are available in
closed form, which isolates the pure particle noise: the root-mean-square
error of the estimated mean should shrink like N^(-1/2).  A least-squares
fit of log rmse against log N over a handful of population sizes makes the
rate visible with modest replication.
"""
import math

import numpy as np

import fredholm as fh

GAUSS = dict(mu=0.5, sigma_f2=0.043**2, sigma_g2=0.045**2)
EPS = 10**-1.5
ITERATIONS = 10
REPLICATES = 40

spec = fh.AnalyticGaussianSpec(**GAUSS, epsilon=EPS)
problem = fh.analytic_gaussian_problem()


def estimated_mean(n, seed):
    pot = fh.exact_potential_for_run(spec, spec.sigma_f2, ITERATIONS)
    init = lambda rng, m: np.clip(0.5 + 0.043 * rng.standard_normal(m), 0, 1)[:, None]
    cfg = fh.EmsConfig(n_particles=n, n_iterations=ITERATIONS, epsilon=EPS,
                       seed=seed, initial_density=init)
    return fh.run(problem, cfg, exact_potential=pot).estimate.mean()[0]


pairs = []
for n in (250, 500, 1000, 2000):
    sq = [(estimated_mean(n, 1000 * n + r) - 0.5) ** 2 for r in range(REPLICATES)]
    rmse = math.sqrt(np.mean(sq))
    pairs.append((n, rmse))
    print(f"N={n:<5} rmse of mean = {rmse:.5f}")

slope = fh.rate_fit(pairs)
print(f"\nfitted slope of log rmse vs log N: {slope:.3f} (the square-root law is -0.5)")

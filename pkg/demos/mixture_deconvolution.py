"""Deconvolve a two-component Gaussian mixture from noisy observations.

The truth mixes a sharp component at 0.3 with a broad one at 0.5; the data
are its convolution with N(0, 0.045^2) noise.  The script runs the particle
solver next to the deterministic grid updates and the sample-driven grid
variant, scoring each against the known truth.  Expect the particle and
grid estimates to recover the mean 0.43333 and variance 0.010196; the
particle solver wins among the sample-driven methods while the grid update
fed the exact analytic data density is unbeatable at this iteration count.
"""
import numpy as np

import fredholm as fh

problem = fh.gaussian_mixture_problem()
model = fh.discretize_problem(problem, 100, 100)
rng = np.random.default_rng(0)

rows = []

# particle solver on fresh draws from the data density
cfg = fh.EmsConfig(n_particles=2000, n_iterations=100, epsilon=1e-3, seed=0)
res = fh.run(problem, cfg)
est = res.estimate
rows.append(("particle (N=2000)", fh.ise(est, problem.truth, problem.x_domain),
             est.mean()[0], est.variance()[0]))

# grid update with the analytic data density
em_final, _ = fh.run_grid(model, None, 100)
rows.append(("grid, exact data", fh.ise(em_final.f_density(), problem.truth,
                                        problem.x_domain), *em_final.moments()))

# smoothed grid update (3-point smoother)
ems_final, _ = fh.run_grid(model, fh.smoothing_matrix_3point(100), 100)
rows.append(("grid + 3-point smoothing", fh.ise(ems_final.f_density(), problem.truth,
                                                problem.x_domain), *ems_final.moments()))

# sample-driven grid variant: data density replaced by a KDE of 1000 draws
ib_model = fh.ib_weights(problem.data.sample(rng, 1000)[:, 0], model)
ib_final, _ = fh.run_grid(ib_model, None, 100)
rows.append(("grid, KDE of 1000 draws", fh.ise(ib_final.f_density(), problem.truth,
                                               problem.x_domain), *ib_final.moments()))

print(f"{'method':<28} {'ISE':>8} {'mean':>9} {'variance':>10}")
for name, ise, mean, var in rows:
    print(f"{name:<28} {ise:8.4f} {mean:9.5f} {var:10.6f}")
print(f"\ntruth: mean 0.43333, variance 0.010196")
print(f"particle ESS floor: {min(d.ess for d in res.diagnostics):.0f} of {cfg.n_particles}")

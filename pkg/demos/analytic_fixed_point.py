"""Walk through the conjugate Gaussian instance, where everything is known
in closed form.

The instance observes a N(0.5, 0.043^2) signal through N(x, 0.045^2) noise.
For every smoothing level epsilon the smoothed recursion has a Gaussian
fixed point whose variance solves a cubic; this script compares that root
against the discretized grid recursion and against the particle solver,
then shows how the divergence of the reconstructed data density grows with
epsilon.
"""
import numpy as np

import fredholm as fh

GAUSS = dict(mu=0.5, sigma_f2=0.043**2, sigma_g2=0.045**2)

problem = fh.analytic_gaussian_problem()
model = fh.discretize_problem(problem, 100, 100)

print("epsilon    root sigma^2   grid sigma^2   particle sigma^2   KL at root")
for eps in (0.001, 0.01, 10**-1.5, 0.05):
    spec = fh.AnalyticGaussianSpec(**GAUSS, epsilon=eps)
    root = fh.ems_fixed_point_variance(spec)

    smoother = fh.smoothing_matrix_gaussian(model.x_edges, eps)
    grid_final, _ = fh.run_grid(model, smoother, 100)
    grid_var = grid_final.moments()[1]

    cfg = fh.EmsConfig(n_particles=2000, n_iterations=100, epsilon=eps, seed=0)
    res = fh.run(problem, cfg)
    particle_var = res.estimate.variance()[0]

    kl = fh.kl_at_fixed_point(spec, root)
    print(f"{eps:<9.4g}  {root:.6e}   {grid_var:.6e}   {particle_var:.6e}     {kl:.6f}")

print()
print("The grid recursion lands on the analytic root to a few 1e-6;")
print("the particle estimate carries an O(bandwidth^2) inflation on top.")

# the zero-smoothing limit recovers the true signal variance exactly
spec0 = fh.AnalyticGaussianSpec(**GAUSS, epsilon=0.0)
print(f"\nepsilon=0 root: {fh.ems_fixed_point_variance(spec0):.6e} "
      f"(true signal variance {GAUSS['sigma_f2']:.6e})")

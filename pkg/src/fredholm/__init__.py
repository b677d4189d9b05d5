"""Particle and grid solvers for Fredholm integral equations of the first kind."""

from .analytic import (
    AnalyticGaussianSpec,
    ems_fixed_point_variance,
    exact_potential,
    exact_potential_for_run,
    kl_at_fixed_point,
)
from .domain import (
    DataSource,
    Domain,
    ForwardKernel,
    FredholmProblem,
    SmoothingKernel,
    normalize_problem,
    smoothing_density,
    smoothing_sample,
)
from .grids import (
    GridModel,
    SmoothingMatrix,
    discretize_problem,
    em_step,
    ems_step,
    ib_weights,
    run_grid,
    smoothing_matrix_3point,
    smoothing_matrix_gaussian,
)
from .imaging import (
    ImageDensity,
    deblur_richardson_lucy,
    image_to_sampler,
    motion_deblur_problem,
    pet_forward_sinogram,
    pet_problem,
    shepp_logan_phantom,
    synthetic_sharp_image,
)
from .metrics import MetricsReport, ise, kl_numeric, match_distance, pointwise_mse, rate_fit
from .particles import (
    DensityEstimate,
    EmsConfig,
    IterationDiagnostics,
    ParticleCloud,
    PotentialTable,
    RunResult,
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
from .problems import analytic_gaussian_problem, gaussian_mixture_problem

__version__ = "0.1.0"

__all__ = [
    "AnalyticGaussianSpec",
    "DataSource",
    "DensityEstimate",
    "Domain",
    "EmsConfig",
    "ForwardKernel",
    "FredholmProblem",
    "GridModel",
    "ImageDensity",
    "IterationDiagnostics",
    "MetricsReport",
    "ParticleCloud",
    "PotentialTable",
    "RunResult",
    "SmoothingKernel",
    "SmoothingMatrix",
    "analytic_gaussian_problem",
    "average_estimates",
    "compute_potentials",
    "deblur_richardson_lucy",
    "discretize_problem",
    "effective_sample_size",
    "em_step",
    "ems_fixed_point_variance",
    "ems_step",
    "estimate_density",
    "exact_potential",
    "exact_potential_for_run",
    "gaussian_mixture_problem",
    "ib_weights",
    "image_to_sampler",
    "init_cloud",
    "ise",
    "kl_at_fixed_point",
    "kl_numeric",
    "match_distance",
    "mixture_density_at",
    "motion_deblur_problem",
    "mutate",
    "normalize_problem",
    "normalize_weights",
    "pet_forward_sinogram",
    "pet_problem",
    "plugin_bandwidth",
    "pointwise_mse",
    "rate_fit",
    "resample_multinomial",
    "run",
    "run_grid",
    "shepp_logan_phantom",
    "smoothing_density",
    "smoothing_matrix_3point",
    "smoothing_matrix_gaussian",
    "smoothing_sample",
    "step",
    "synthetic_sharp_image",
]

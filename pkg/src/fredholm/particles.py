"""Particle solver for Fredholm equations of the first kind.

The solver advances a population of N weighted pairs (X, Y) on the product
of the solution and data domains.  Each iteration

  1. moves every X through the truncated Gaussian smoothing kernel and
     redraws every Y from the data source (mutation);
  2. weights particles by importance ratios ``g(Y|X) / h_N(Y)``, where the
     unknown data-fit denominator is replaced by the particle mixture
     ``h_N(y) = mean_i g(y | X_i)``, averaged over M replicate data draws
     shared by all particles;
  3. forms a closed-form Gaussian-mixture density estimate (kernel density
     estimate of the weighted cloud convolved with the smoothing kernel);
  4. resamples multinomially when the effective sample size falls below a
     threshold fraction of N, otherwise carries the weights into the next
     iteration's weighting product.

All reductions run in fixed particle-index order with a configuration-pinned
chunk size, so results are bit-reproducible for a given seed regardless of
worker count.  Clouds are immutable; the RNG is explicit everywhere.
"""
from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

from .domain import (
    DataSource,
    Domain,
    ForwardKernel,
    FredholmProblem,
    SmoothingKernel,
    as_points,
    smoothing_sample,
)

__all__ = [
    "ParticleCloud",
    "PotentialTable",
    "EmsConfig",
    "IterationDiagnostics",
    "DensityEstimate",
    "RunResult",
    "init_cloud",
    "mutate",
    "mixture_density_at",
    "compute_potentials",
    "normalize_weights",
    "effective_sample_size",
    "resample_multinomial",
    "plugin_bandwidth",
    "estimate_density",
    "step",
    "run",
    "average_estimates",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64).copy()
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class EmsConfig:
    """Algorithm knobs.

    ``n_replicates`` (M) defaults to the particle count.  The
    ``initial_density`` sampler, when given, is called as
    ``sampler(rng, n) -> (n, dim)``; otherwise particles start uniform on
    the solution domain.  ``chunk_size`` pins the reduction chunking and
    therefore the floating-point summation order.
    """

    n_particles: int
    n_iterations: int
    epsilon: float
    n_replicates: Optional[int] = None
    resample_threshold: float = 0.5
    seed: int = 0
    initial_density: Optional[Callable] = None
    chunk_size: int = 512

    def __post_init__(self):
        if self.n_particles < 2:
            raise ValueError("need at least 2 particles")
        if self.n_iterations < 1:
            raise ValueError("need at least 1 iteration")
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be positive")
        if self.n_replicates is not None and self.n_replicates < 1:
            raise ValueError("n_replicates must be positive")
        if not 0.0 < self.resample_threshold <= 1.0:
            raise ValueError("resample_threshold must lie in (0, 1]")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be positive")

    @property
    def replicates(self) -> int:
        return self.n_replicates if self.n_replicates is not None else self.n_particles


@dataclass(frozen=True)
class ParticleCloud:
    """Weighted particle pairs at one iteration; immutable."""

    x_positions: np.ndarray
    y_positions: np.ndarray
    weights: np.ndarray
    iteration: int

    def __post_init__(self):
        x = _frozen(np.atleast_2d(self.x_positions))
        y = _frozen(np.atleast_2d(self.y_positions))
        w = _frozen(np.ravel(self.weights))
        if x.shape[0] != y.shape[0] or x.shape[0] != w.shape[0]:
            raise ValueError("x, y and weights must share the particle count")
        if x.shape[0] < 1:
            raise ValueError("cloud must hold at least one particle")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if self.iteration < 0:
            raise ValueError("iteration must be nonnegative")
        object.__setattr__(self, "x_positions", x)
        object.__setattr__(self, "y_positions", y)
        object.__setattr__(self, "weights", w)

    @property
    def n_particles(self) -> int:
        return self.x_positions.shape[0]


@dataclass(frozen=True)
class PotentialTable:
    """Unnormalized importance weights plus the cached mixture values.

    For kernels bounded as ``1/m_g <= g <= m_g`` every entry of
    ``values / M`` lies in ``[1/m_g^2, m_g^2]``; kernels touching zero
    (deblurring) may produce zero entries, which is tolerated as long as
    some particle keeps positive weight.
    """

    values: np.ndarray
    mixture_cache: Optional[np.ndarray] = None

    def __post_init__(self):
        v = _frozen(np.ravel(self.values))
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("potential values must be finite and nonnegative")
        if v.sum() <= 0:
            raise ValueError("all potential values vanished; kernel support mismatch")
        object.__setattr__(self, "values", v)
        if self.mixture_cache is not None:
            c = _frozen(np.ravel(self.mixture_cache))
            if not np.all(np.isfinite(c)) or np.any(c < 0):
                raise ValueError("mixture cache must be nonnegative and finite")
            object.__setattr__(self, "mixture_cache", c)


@dataclass(frozen=True)
class IterationDiagnostics:
    iteration: int
    ess: float
    resampled: bool
    bandwidth: float
    wall_time: float
    domain_mass: float = float("nan")


@dataclass(frozen=True)
class RunResult:
    estimate: "DensityEstimate"
    diagnostics: list
    estimates: Optional[list] = None


class DensityEstimate:
    """Axis-aligned Gaussian mixture over the solution domain.

    Components sit at the (post-weighting) particle positions with
    per-axis variance ``s_N^2 * Sigma_kk + epsilon^2``: the closed form of
    a Gaussian kernel density estimate convolved with the Gaussian
    smoother.  The boxes' truncation of the smoother is deliberately
    dropped here so the mixture stays closed form; the mass escaping the
    domain is available from :meth:`mass_in_domain` and is negligible for
    the bandwidths this solver runs at.
    """

    def __init__(self, centers, mixture_weights, component_variance, domain: Domain):
        self.centers = _frozen(np.atleast_2d(centers))
        self.mixture_weights = _frozen(np.ravel(mixture_weights))
        cv = np.asarray(component_variance, dtype=np.float64)
        if cv.ndim == 1:
            cv = np.broadcast_to(cv, self.centers.shape)
        self.component_variance = _frozen(cv)
        self.domain = domain
        n, d = self.centers.shape
        if self.mixture_weights.shape != (n,):
            raise ValueError("one weight per component required")
        if abs(self.mixture_weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if self.component_variance.shape != (n, d):
            raise ValueError("component variance must broadcast to (n, dim)")
        if np.any(self.component_variance <= 0):
            raise ValueError("component variances must be positive")
        if d != domain.dim:
            raise ValueError("centers dimension disagrees with the domain")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def density(self, x, chunk_size: int = 1024) -> np.ndarray:
        """Evaluate the mixture density; broadcasts over point batches."""
        p = as_points(x, self.dim)
        flat = p.reshape(-1, self.dim)
        out = np.zeros(flat.shape[0])
        for start in range(0, self.centers.shape[0], chunk_size):
            c = self.centers[start:start + chunk_size]
            v = self.component_variance[start:start + chunk_size]
            w = self.mixture_weights[start:start + chunk_size]
            diff = flat[:, None, :] - c[None, :, :]
            log_pdf = -0.5 * np.sum(diff * diff / v[None, :, :], axis=-1)
            log_pdf -= 0.5 * np.sum(np.log(2.0 * math.pi * v), axis=-1)[None, :]
            out += np.exp(log_pdf) @ w
        return out.reshape(p.shape[:-1])

    __call__ = density

    def mean(self) -> np.ndarray:
        return self.mixture_weights @ self.centers

    def variance(self) -> np.ndarray:
        m = self.mean()
        second = self.mixture_weights @ (self.centers**2 + self.component_variance)
        return second - m * m

    def mass_in_domain(self) -> float:
        """Exact mixture mass inside the domain box (per-axis CDF products)."""
        sd = np.sqrt(self.component_variance)
        hi = ndtr((self.domain.upper - self.centers) / sd)
        lo = ndtr((self.domain.lower - self.centers) / sd)
        return float(self.mixture_weights @ np.prod(hi - lo, axis=-1))


def average_estimates(estimates) -> DensityEstimate:
    """Pool several mixture estimates into one with equal block weight.

    Implements the stabilization trick of averaging the output over the
    last few iterations once the recursion has settled.
    """
    if not estimates:
        raise ValueError("need at least one estimate to average")
    k = len(estimates)
    centers = np.concatenate([e.centers for e in estimates], axis=0)
    weights = np.concatenate([e.mixture_weights / k for e in estimates])
    variances = np.concatenate([e.component_variance for e in estimates], axis=0)
    return DensityEstimate(centers, weights, variances, estimates[0].domain)


def init_cloud(problem: FredholmProblem, config: EmsConfig,
               rng: np.random.Generator) -> ParticleCloud:
    """Initial population: X from the initial density, Y from the data source."""
    n = config.n_particles
    if config.initial_density is None:
        x = problem.x_domain.uniform(rng, n)
    else:
        x = as_points(config.initial_density(rng, n), problem.x_domain.dim)
        x = x.reshape(n, problem.x_domain.dim)
        if not problem.x_domain.contains(x).all():
            raise ValueError("initial density produced points outside the solution domain")
    y = problem.data.sample(rng, n)
    return ParticleCloud(x, y, np.full(n, 1.0 / n), iteration=1)


def mutate(cloud: ParticleCloud, kernel: SmoothingKernel, data: DataSource,
           rng: np.random.Generator) -> ParticleCloud:
    """Advance X through the smoother, redraw Y, keep weights, bump iteration."""
    x = smoothing_sample(kernel, cloud.x_positions, rng)
    y = data.sample(rng, cloud.n_particles)
    return ParticleCloud(x, y, cloud.weights, cloud.iteration + 1)


def mixture_density_at(cloud: ParticleCloud, kernel: ForwardKernel, y,
                       chunk_size: int = 512) -> np.ndarray:
    """Particle mixture ``h_N(y) = sum_i w_i g(y | X_i)`` at one or many y.

    On a uniform-weight cloud (every cloud straight after initialization
    or resampling) this is the exact arithmetic mean over particles; when
    weights were carried instead of resampling, they weight the mixture so
    that it keeps approximating the current solution marginal.  Summation
    runs over fixed-order particle chunks.  A zero or non-finite value
    means the kernel has no support at that data point and raises.
    """
    ys = as_points(y, cloud.y_positions.shape[1])
    squeeze = ys.ndim == 1
    flat = np.atleast_2d(ys)
    n = cloud.n_particles
    acc = np.zeros(flat.shape[0])
    for start in range(0, n, chunk_size):
        xc = cloud.x_positions[start:start + chunk_size]
        block = np.asarray(
            kernel.evaluate(xc[:, None, :], flat[None, :, :]), dtype=np.float64)
        acc += cloud.weights[start:start + chunk_size] @ block
    if not np.all(np.isfinite(acc)) or np.any(acc <= 0):
        raise FloatingPointError(
            "particle mixture density vanished or overflowed at a data point")
    return acc[0] if squeeze else acc


def compute_potentials(cloud: ParticleCloud, kernel: ForwardKernel, n_replicates: int,
                       data: DataSource, rng: np.random.Generator,
                       chunk_size: int = 512) -> PotentialTable:
    """Importance weights from M replicate data draws shared across particles.

    Draws ``Y^1..Y^M`` once, caches the particle mixture ``h_N(Y^j)``
    (weighted by the cloud's carried weights, which are uniform right
    after initialization or resampling) and accumulates
    ``values[i] = sum_j g(Y^j | X_i) / h_N(Y^j)``.  Sharing the replicates
    keeps the cost at O(N M) kernel evaluations; with M = 1 the single
    draw plays the role of the per-particle data point of the basic
    scheme.  Kernel evaluations happen once per (particle, replicate) pair
    in fixed chunk order.
    """
    if n_replicates < 1:
        raise ValueError("n_replicates must be positive")
    y_rep = data.sample(rng, n_replicates)
    n = cloud.n_particles
    values = np.zeros(n)
    cache = np.empty(n_replicates)
    x = cloud.x_positions
    dropped = 0
    for start in range(0, n_replicates, chunk_size):
        yc = y_rep[start:start + chunk_size]
        g = np.asarray(kernel.evaluate(x[:, None, :], yc[None, :, :]), dtype=np.float64)
        h = cloud.weights @ g
        if not np.all(np.isfinite(h)):
            raise FloatingPointError("particle mixture density overflowed at a replicate draw")
        cache[start:start + chunk_size] = h
        ok = h > 0
        if ok.all():
            values += (g / h).sum(axis=1)
        else:
            # A vanished mixture value means no particle supports this draw;
            # with kernels bounded away from zero this cannot happen, and for
            # compactly supported kernels the draw pulls mass toward a region
            # holding no particles, so no particle can absorb it: drop it.
            dropped += int((~ok).sum())
            if ok.any():
                values += (g[:, ok] / h[ok]).sum(axis=1)
    if dropped == n_replicates:
        raise FloatingPointError(
            "particle mixture density vanished at every replicate draw; the "
            "kernel has no support on the data")
    if dropped:
        warnings.warn(
            f"{dropped} of {n_replicates} replicate draws fell outside the "
            "particle mixture's support and were dropped", RuntimeWarning,
            stacklevel=2)
    return PotentialTable(values, cache)


def _exact_potentials(cloud: ParticleCloud, potential_fn, n_replicates: int,
                      data: DataSource, rng: np.random.Generator,
                      chunk_size: int) -> PotentialTable:
    """Same replicate-averaged weighting but with a supplied exact potential."""
    y_rep = data.sample(rng, n_replicates)
    x = cloud.x_positions
    values = np.zeros(cloud.n_particles)
    for start in range(0, n_replicates, chunk_size):
        yc = y_rep[start:start + chunk_size]
        g = np.asarray(potential_fn(x[:, None, :], yc[None, :, :], cloud.iteration),
                       dtype=np.float64)
        values += g.sum(axis=1)
    return PotentialTable(values, None)


def normalize_weights(table) -> np.ndarray:
    """Normalize potential values (or any nonnegative vector) to sum exactly 1."""
    v = table.values if isinstance(table, PotentialTable) else np.ravel(
        np.asarray(table, dtype=np.float64))
    if not np.all(np.isfinite(v)) or np.any(v < 0):
        raise ValueError("weights must be finite and nonnegative")
    total = v.sum()
    if total <= 0:
        raise ZeroDivisionError("cannot normalize an all-zero weight vector")
    w = v / total
    return w / w.sum()


def effective_sample_size(table) -> float:
    """Kong's effective sample size ``(sum v)^2 / sum v^2``; scale invariant."""
    v = table.values if isinstance(table, PotentialTable) else np.ravel(
        np.asarray(table, dtype=np.float64))
    peak = v.max()
    if peak <= 0:
        raise ValueError("effective sample size needs a positive weight vector")
    r = v / peak
    return float(r.sum() ** 2 / (r @ r))


def resample_multinomial(cloud: ParticleCloud, weights,
                         rng: np.random.Generator) -> ParticleCloud:
    """Draw N ancestors i.i.d. from the weights; offspring get uniform weight.

    Ancestor uniforms are drawn in particle-index order so runs replay
    exactly under a fixed seed.
    """
    w = np.ravel(np.asarray(weights, dtype=np.float64))
    n = cloud.n_particles
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    idx = np.searchsorted(cdf, rng.random(n), side="left")
    idx = np.minimum(idx, n - 1)
    return ParticleCloud(cloud.x_positions[idx], cloud.y_positions[idx],
                         np.full(n, 1.0 / n), cloud.iteration)


def plugin_bandwidth(cloud: ParticleCloud, weights, ess: float):
    """Gaussian-reference plug-in bandwidth with ESS substituted for N.

    Returns ``(s_N, sigma_diag)`` where ``sigma_diag`` is the weighted
    per-axis sample variance and

        s_N = (4 / (d + 2))^(1/(d+4)) * ess^(-1/(d+4)).

    A zero-variance axis falls back to a bandwidth of 1e-6 of the axis
    width, with a warning.
    """
    if ess < 1.0:
        raise ValueError("effective sample size below 1")
    w = np.ravel(np.asarray(weights, dtype=np.float64))
    x = cloud.x_positions
    mean = w @ x
    centered = x - mean
    var = w @ (centered * centered)
    d = x.shape[1]
    s_n = (4.0 / (d + 2.0)) ** (1.0 / (d + 4.0)) * ess ** (-1.0 / (d + 4.0))
    if np.any(var <= 0):
        warnings.warn("zero-variance axis in the particle cloud; using a token bandwidth",
                      RuntimeWarning, stacklevel=2)
        widths = np.ptp(x, axis=0)
        widths = np.where(widths > 0, widths, 1.0)
        floor = (1e-6 * widths) ** 2 / max(s_n, 1e-12) ** 2
        var = np.where(var > 0, var, floor)
    return s_n, var


def estimate_density(cloud: ParticleCloud, weights, kernel: SmoothingKernel,
                     bandwidth) -> DensityEstimate:
    """Closed-form output density: weighted KDE convolved with the smoother.

    Both kernels are Gaussian, so the convolution is the mixture of
    normals centered on the particles with per-axis variance
    ``s_N^2 * sigma_diag + epsilon^2``.
    """
    s_n, sigma_diag = bandwidth
    comp_var = s_n**2 * np.asarray(sigma_diag, dtype=np.float64) + kernel.epsilon**2
    return DensityEstimate(cloud.x_positions, normalize_weights(weights),
                           comp_var, kernel.domain)


def step(cloud: ParticleCloud, problem: FredholmProblem, config: EmsConfig,
         rng: np.random.Generator, exact_potential=None):
    """One full iteration: mutate, weight, estimate, then resample or carry.

    The importance weights used by the estimator multiply the weights
    carried on the incoming cloud (uniform right after a resampling step)
    with the fresh potential values and renormalize.  The effective sample
    size driving both the diagnostics and the resampling trigger is the
    one of the fresh potential table, matching the adaptive rule
    "resample when the potentials' ESS falls below a fraction of N".

    Returns ``(next_cloud, estimate, diagnostics)``.
    """
    t0 = time.perf_counter()
    smoother = SmoothingKernel(config.epsilon, problem.x_domain)
    moved = mutate(cloud, smoother, problem.data, rng)
    if exact_potential is None:
        table = compute_potentials(moved, problem.kernel, config.replicates,
                                   problem.data, rng, config.chunk_size)
    else:
        table = _exact_potentials(moved, exact_potential, config.replicates,
                                  problem.data, rng, config.chunk_size)
    combined = moved.weights * table.values
    if combined.sum() <= 0:
        raise ZeroDivisionError("every particle lost its weight; kernel support mismatch")
    weights = normalize_weights(combined)
    ess = effective_sample_size(table)
    n = config.n_particles
    if ess < 0.01 * n:
        warnings.warn(f"severe weight degeneracy: ESS = {ess:.2f} of N = {n}",
                      RuntimeWarning, stacklevel=2)
    bandwidth = plugin_bandwidth(moved, weights, ess)
    estimate = estimate_density(moved, weights, smoother, bandwidth)
    resampled = ess < config.resample_threshold * n
    if resampled:
        next_cloud = resample_multinomial(moved, weights, rng)
    else:
        next_cloud = ParticleCloud(moved.x_positions, moved.y_positions,
                                   weights, moved.iteration)
    diag = IterationDiagnostics(
        iteration=moved.iteration,
        ess=ess,
        resampled=resampled,
        bandwidth=bandwidth[0],
        wall_time=time.perf_counter() - t0,
        domain_mass=estimate.mass_in_domain(),
    )
    return next_cloud, estimate, diag


def run(problem: FredholmProblem, config: EmsConfig,
        rng: Optional[np.random.Generator] = None, exact_potential=None,
        keep_estimates: bool = False, average_last: int = 0) -> RunResult:
    """Run the full particle solver for ``config.n_iterations`` iterations.

    ``exact_potential`` switches the weighting from the particle-mixture
    approximation to a supplied callable ``(x, y, step_index) -> values``
    (idealized runs on conjugate problems).  ``keep_estimates`` retains the
    per-iteration mixtures; ``average_last`` > 1 additionally replaces the
    final estimate by the pooled mixture of the last that many iterations.
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    cloud = init_cloud(problem, config, rng)
    diagnostics = []
    estimates = [] if (keep_estimates or average_last > 1) else None
    estimate = None
    for _ in range(config.n_iterations):
        cloud, estimate, diag = step(cloud, problem, config, rng,
                                     exact_potential=exact_potential)
        diagnostics.append(diag)
        if estimates is not None:
            estimates.append(estimate)
    if average_last > 1 and estimates is not None:
        estimate = average_estimates(estimates[-average_last:])
    return RunResult(estimate=estimate, diagnostics=diagnostics,
                     estimates=estimates if keep_estimates else None)

"""Problem model for Fredholm equations of the first kind.

A problem instance couples a forward kernel ``g(y | x)`` on a pair of
bounded box domains with a source of draws from the data density ``h``,
optionally carrying the ground truth ``f`` for scoring.  The module also
provides the Gaussian smoothing kernel (truncated to the solution domain)
used by the smoothed solvers, and the normalization transform that casts a
general positive-kernel equation ``h = \\int f g`` into probability-density
form.

Points are numpy arrays whose trailing axis is the domain dimension; all
operations broadcast over leading batch axes.  Every object here is
immutable after construction and safe to share across workers; random
number generators are always passed in explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import ndtr

__all__ = [
    "Domain",
    "ForwardKernel",
    "DataSource",
    "SmoothingKernel",
    "FredholmProblem",
    "normalize_problem",
    "smoothing_sample",
    "smoothing_density",
    "trapezoid_rule",
]

_MAX_REJECTION_ATTEMPTS = 10**6


def as_points(x, dim: int) -> np.ndarray:
    """Coerce ``x`` to a float array with trailing axis ``dim``.

    Scalars and shape-(n,) arrays are promoted to (1, 1) / (n, 1) when
    ``dim == 1`` so that one-dimensional problems accept plain vectors.
    """
    a = np.asarray(x, dtype=np.float64)
    if dim == 1 and (a.ndim == 0 or a.shape[-1] != 1):
        a = a[..., np.newaxis]
    if a.shape[-1] != dim:
        raise ValueError(f"expected points with trailing dimension {dim}, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class Domain:
    """Axis-aligned box ``[lower_0, upper_0] x ... x [lower_{d-1}, upper_{d-1}]``."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=np.float64)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=np.float64)).copy()
        if lo.ndim != 1 or lo.shape != hi.shape:
            raise ValueError("lower and upper must be 1-d arrays of equal length")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("domain bounds must be finite")
        if not np.all(lo < hi):
            raise ValueError("every axis needs lower < upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, points) -> np.ndarray:
        """Boolean mask over the batch axes of ``points``."""
        p = as_points(points, self.dim)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)

    def uniform(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` points uniformly, shape (n, dim)."""
        return self.lower + rng.random((n, self.dim)) * self.widths

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


def trapezoid_rule(domain: Domain, nodes_per_axis: int):
    """Tensor-product trapezoid nodes and weights over a box domain.

    Returns ``(points, weights)`` where points has shape (nodes^dim, dim)
    and ``weights @ values`` approximates the integral over the box.
    """
    if nodes_per_axis < 2:
        raise ValueError("need at least 2 quadrature nodes per axis")
    axes, axis_w = [], []
    for k in range(domain.dim):
        t = np.linspace(domain.lower[k], domain.upper[k], nodes_per_axis)
        w = np.full(nodes_per_axis, t[1] - t[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(t)
        axis_w.append(w)
    grids = np.meshgrid(*axes, indexing="ij")
    points = np.stack([g.ravel() for g in grids], axis=-1)
    weights = axis_w[0]
    for w in axis_w[1:]:
        weights = np.multiply.outer(weights, w)
    return points, np.asarray(weights).ravel()


@dataclass(frozen=True)
class ForwardKernel:
    """Pointwise-evaluable Markov kernel density ``g(y | x)``.

    ``evaluate(x, y)`` must accept arrays with trailing axes (dim_x,) and
    (dim_y,), broadcast over leading axes, and return nonnegative values.
    ``lower_bound``/``upper_bound`` declare the strong-mixing envelope
    ``1/m_g <= g <= m_g`` when it is known to hold; they are advisory and
    only spot-checked on probe points (see :func:`probe_kernel_bounds`).
    Kernels that touch zero (deblurring) are accepted; the boundedness
    guarantees on the importance weights then no longer apply.
    """

    evaluate: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lower_bound: float = 0.0
    upper_bound: Optional[float] = None

    def __post_init__(self):
        if self.lower_bound < 0:
            raise ValueError("kernel lower bound must be nonnegative")
        if self.upper_bound is not None and self.upper_bound <= 0:
            raise ValueError("kernel upper bound must be positive")

    def __call__(self, x, y) -> np.ndarray:
        return self.evaluate(x, y)


def probe_kernel_bounds(kernel: ForwardKernel, x_domain: Domain, y_domain: Domain,
                        rng: np.random.Generator, n_probes: int = 256) -> bool:
    """Spot-check declared kernel bounds on random (x, y) probes."""
    x = x_domain.uniform(rng, n_probes)
    y = y_domain.uniform(rng, n_probes)
    vals = np.asarray(kernel.evaluate(x, y))
    if not np.all(np.isfinite(vals)) or np.any(vals < 0):
        return False
    ok = np.all(vals >= kernel.lower_bound - 1e-12)
    if kernel.upper_bound is not None:
        ok = ok and np.all(vals <= kernel.upper_bound + 1e-12)
    return bool(ok)


class DataSource:
    """Source of draws from the data density ``h``.

    Two kinds exist: ``exact-sampler`` wraps a callable drawing fresh
    points, ``empirical-bootstrap`` resamples a stored finite set with
    replacement.  ``density`` is attached when ``h`` is known analytically.
    """

    def __init__(self, kind: str, sampler, support: Domain,
                 density: Optional[Callable] = None):
        if kind not in ("exact-sampler", "empirical-bootstrap"):
            raise ValueError(f"unknown data source kind {kind!r}")
        self.kind = kind
        self._sampler = sampler
        self.support = support
        self.density = density

    @classmethod
    def from_sampler(cls, sampler, support: Domain, density=None) -> "DataSource":
        """Exact sampler: ``sampler(rng, n) -> (n, dim)`` fresh draws."""
        return cls("exact-sampler", sampler, support, density)

    @classmethod
    def from_samples(cls, samples, support: Domain, density=None) -> "DataSource":
        """Bootstrap source resampling a fixed sample set uniformly."""
        pts = as_points(np.atleast_1d(samples), support.dim)
        pts = pts.reshape(-1, support.dim)
        if pts.shape[0] == 0:
            raise ValueError("empirical data source needs a nonempty sample set")
        pts = pts.copy()
        pts.flags.writeable = False

        def bootstrap(rng: np.random.Generator, n: int) -> np.ndarray:
            idx = rng.integers(0, pts.shape[0], size=n)
            return pts[idx]

        src = cls("empirical-bootstrap", bootstrap, support, density)
        src.samples = pts
        return src

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        out = as_points(self._sampler(rng, n), self.support.dim)
        return out.reshape(n, self.support.dim)

    def check_density_normalization(self, nodes_per_axis: int = 512, tol: float = 1e-3) -> float:
        """Quadrature check that the attached density integrates to 1.

        Returns the integral; raises if no density is attached or the
        integral misses 1 by more than ``tol``.
        """
        if self.density is None:
            raise ValueError("data source has no analytic density")
        pts, w = trapezoid_rule(self.support, nodes_per_axis)
        total = float(w @ np.asarray(self.density(pts), dtype=np.float64).ravel())
        if abs(total - 1.0) > tol:
            raise ValueError(f"data density integrates to {total}, not 1 within {tol}")
        return total


@dataclass(frozen=True)
class SmoothingKernel:
    """Isotropic Gaussian smoother truncated to the solution domain.

    The density is ``K(v, u) = T(u - v) 1_X(u) / Z(v)`` with ``T`` the
    isotropic normal of per-axis standard deviation ``epsilon`` and
    ``Z(v)`` the Gaussians' mass inside the box around ``v``.  On a box,
    ``Z(v)`` factorizes into per-axis normal CDF differences, so no
    quadrature is ever needed.
    """

    epsilon: float
    domain: Domain

    def __post_init__(self):
        if not (self.epsilon > 0 and math.isfinite(self.epsilon)):
            raise ValueError("epsilon must be a positive finite real")

    def normalizer(self, v) -> np.ndarray:
        """Truncation mass Z(v), broadcasting over batches of v."""
        p = as_points(v, self.domain.dim)
        hi = ndtr((self.domain.upper - p) / self.epsilon)
        lo = ndtr((self.domain.lower - p) / self.epsilon)
        return np.prod(hi - lo, axis=-1)


def smoothing_sample(kernel: SmoothingKernel, v, rng: np.random.Generator) -> np.ndarray:
    """Draw from ``K(v, .)`` by rejection against the box.

    Accepts a single point or a batch (n, dim); the Gaussian proposal is
    redrawn only for points that landed outside the domain, so accepted
    coordinates are never discarded.  Aborts if any point rejects more
    than 10^6 times (epsilon enormously larger than the domain).
    """
    dom = kernel.domain
    p = as_points(v, dom.dim)
    squeeze = p.ndim == 1
    pts = np.atleast_2d(p)
    if not dom.contains(pts).all():
        raise ValueError("smoothing kernel center outside the domain")
    out = pts + kernel.epsilon * rng.standard_normal(pts.shape)
    bad = ~dom.contains(out)
    rounds = 1
    total_proposals = pts.shape[0]
    ever_accepted = bool((~bad).any())
    while bad.any():
        rounds += 1
        if rounds > _MAX_REJECTION_ATTEMPTS or (
                total_proposals > _MAX_REJECTION_ATTEMPTS and not ever_accepted):
            raise RuntimeError(
                "smoothing_sample exhausted its rejection budget; epsilon is far "
                "larger than the domain width")
        idx = np.flatnonzero(bad)
        out[idx] = pts[idx] + kernel.epsilon * rng.standard_normal((idx.size, dom.dim))
        still_bad = ~dom.contains(out[idx])
        bad[idx] = still_bad
        total_proposals += idx.size
        ever_accepted = ever_accepted or bool((~still_bad).any())
    return out[0] if squeeze else out


def smoothing_density(kernel: SmoothingKernel, v, u) -> np.ndarray:
    """Evaluate ``K(v, u)``; zero for ``u`` outside the domain."""
    dom = kernel.domain
    pv = as_points(v, dom.dim)
    pu = as_points(u, dom.dim)
    z = (pu - pv) / kernel.epsilon
    log_t = -0.5 * np.sum(z * z, axis=-1) - dom.dim * (
        0.5 * math.log(2.0 * math.pi) + math.log(kernel.epsilon))
    dens = np.exp(log_t) / kernel.normalizer(pv)
    return np.where(dom.contains(pu), dens, 0.0)


@dataclass(frozen=True)
class FredholmProblem:
    """One equation instance ``h(y) = \\int_X f(x) g(y|x) dx``."""

    x_domain: Domain
    y_domain: Domain
    kernel: ForwardKernel
    data: DataSource
    truth: Optional[Callable] = None

    def __post_init__(self):
        if self.data.support.dim != self.y_domain.dim:
            raise ValueError("data source support dimension disagrees with y domain")
        if not (np.allclose(self.data.support.lower, self.y_domain.lower)
                and np.allclose(self.data.support.upper, self.y_domain.upper)):
            raise ValueError("data source support disagrees with y domain bounds")


def _grid_sampler(density_on_grid: np.ndarray, points: np.ndarray,
                  cell_widths: np.ndarray):
    """Categorical-over-nodes sampler with uniform within-cell jitter."""
    mass = np.clip(density_on_grid, 0.0, None)
    mass = mass / mass.sum()
    cdf = np.cumsum(mass)
    cdf[-1] = 1.0
    frozen_points = points.copy()
    frozen_points.flags.writeable = False

    def sampler(rng: np.random.Generator, n: int) -> np.ndarray:
        idx = np.searchsorted(cdf, rng.random(n), side="left")
        jitter = (rng.random((n, frozen_points.shape[1])) - 0.5) * cell_widths
        return frozen_points[idx] + jitter

    return sampler


def normalize_problem(h_raw, g_raw, x_domain: Domain, y_domain: Domain,
                      quadrature_nodes: int = 256):
    """Cast a positive-kernel integral equation into density form.

    Rescales ``h_raw`` to a probability density and ``g_raw(. | x)`` to a
    Markov kernel, returning the normalized problem together with the
    multiplicative factor that maps a solved normalized ``f`` back to the
    original scale:

        h_tilde(y) = h_raw(y) / I_h,
        g_tilde(y|x) = g_raw(x, y) / c_g(x),     c_g(x) = int_Y g_raw(x, y) dy,
        f(x) = f_tilde(x) * I_h / c_g(x).

    ``g_raw`` takes ``(x, y)`` batches like :class:`ForwardKernel`.  Inputs
    must be strictly positive on the quadrature grid; callers holding
    merely bounded-below inputs must apply their own positivity shift
    first.  Integrals use tensor trapezoid rules with ``quadrature_nodes``
    per axis (>= 16).

    Returns
    -------
    (problem, unnormalizer) : (FredholmProblem, callable)
    """
    if quadrature_nodes < 16:
        raise ValueError("quadrature_nodes must be at least 16 per axis")
    y_pts, y_w = trapezoid_rule(y_domain, quadrature_nodes)

    h_vals = np.asarray(h_raw(y_pts), dtype=np.float64).ravel()
    if not np.all(np.isfinite(h_vals)):
        raise ValueError("h_raw is non-finite at a quadrature node")
    if np.any(h_vals < 0):
        j = int(np.argmin(h_vals))
        raise ValueError(
            f"h_raw is non-positive ({h_vals[j]}) at quadrature node y={y_pts[j]}; "
            "apply a positivity shift before normalizing")
    integral_h = float(y_w @ h_vals)
    if not (np.isfinite(integral_h) and integral_h > 0):
        raise ValueError("integral of h_raw is not finite and positive")

    def kernel_row_integrals(x) -> np.ndarray:
        px = as_points(x, x_domain.dim)
        batch = px.reshape(-1, x_domain.dim)
        vals = np.asarray(g_raw(batch[:, np.newaxis, :], y_pts[np.newaxis, :, :]),
                          dtype=np.float64)
        if not np.all(np.isfinite(vals)):
            raise ValueError("g_raw is non-finite at a quadrature node")
        if np.any(vals < 0):
            raise ValueError("g_raw is non-positive at a quadrature node; apply a "
                             "positivity shift before normalizing")
        integrals = vals @ y_w
        return integrals.reshape(px.shape[:-1])

    x_probe, _ = trapezoid_rule(x_domain, min(quadrature_nodes, 32))
    probe_integrals = kernel_row_integrals(x_probe)
    if not (np.all(np.isfinite(probe_integrals)) and np.all(probe_integrals > 0)):
        raise ValueError("kernel row integral non-finite or non-positive on probe grid")

    def g_tilde(x, y):
        return np.asarray(g_raw(x, y), dtype=np.float64) / kernel_row_integrals(x)

    def h_tilde(y):
        return np.asarray(h_raw(y), dtype=np.float64) / integral_h

    widths = (y_domain.widths / (quadrature_nodes - 1))
    data = DataSource.from_sampler(_grid_sampler(h_vals * y_w, y_pts, widths),
                                   y_domain, density=h_tilde)
    problem = FredholmProblem(x_domain=x_domain, y_domain=y_domain,
                              kernel=ForwardKernel(evaluate=g_tilde), data=data)

    def unnormalizer(x):
        return integral_h / kernel_row_integrals(x)

    return problem, unnormalizer

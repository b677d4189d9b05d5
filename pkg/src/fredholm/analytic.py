"""Closed-form Gaussian oracle for the smoothed EM recursion.

For the conjugate instance

    f = N(mu, sigma_f^2),   g(y|x) = N(y; x, sigma_g^2),
    h = N(mu, sigma_h^2),   sigma_h^2 = sigma_f^2 + sigma_g^2,

every iterate of the smoothed recursion stays Gaussian with mean ``mu``,
so the whole flow reduces to a scalar variance recursion.  One EM
reweighting maps a variance ``s^2`` to

    v = s^2 * ((sigma_g^2 + sigma_h^2) s^2 + sigma_g^4) / (s^2 + sigma_g^2)^2

and the Gaussian smoothing convolution then adds ``epsilon^2``.  Setting
``v + epsilon^2 = s^2`` gives the fixed-point condition, a cubic in
``u = sigma_ems^2``:

    u^3 + u^2 (sigma_g^2 - sigma_h^2 - eps^2)
        - 2 u eps^2 sigma_g^2 - eps^2 sigma_g^4 = 0.

The published form of this cubic drops the ``-eps^2`` term in the u^2
coefficient and has a dimensionally inconsistent constant term; the
coefficients above were re-derived from the recursion and confirmed by
brute-force quadrature iteration (agreement to 1e-12; see the test
suite), so they are what this module solves.

With ``epsilon = 0`` the positive root is exactly ``sigma_f^2`` and the
recursion is plain EM.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "AnalyticGaussianSpec",
    "ems_fixed_point_variance",
    "kl_at_fixed_point",
    "exact_potential",
    "ems_variance_step",
    "run_variance_schedule",
    "exact_potential_for_run",
]


@dataclass(frozen=True)
class AnalyticGaussianSpec:
    """Parameters of the conjugate Gaussian instance."""

    mu: float
    sigma_f2: float
    sigma_g2: float
    epsilon: float = 0.0

    def __post_init__(self):
        if self.sigma_f2 <= 0 or self.sigma_g2 <= 0:
            raise ValueError("variances must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")

    @property
    def sigma_h2(self) -> float:
        return self.sigma_f2 + self.sigma_g2


def _fixed_point_cubic(spec: AnalyticGaussianSpec):
    a = spec.sigma_g2
    b = spec.sigma_h2
    e = spec.epsilon**2
    return (1.0, a - b - e, -2.0 * e * a, -e * a * a)


def ems_fixed_point_variance(spec: AnalyticGaussianSpec) -> float:
    """Positive root of the smoothed-recursion fixed-point cubic.

    Solved by bisection rather than the depressed-cubic formulas, which
    cancel catastrophically at small ``epsilon``.  The bracket is
    ``[1e-15, sigma_h^2 + 10 eps^2 sigma_g^2 + 1]``, widened tenfold up to
    five times if no sign change is found; relative tolerance 1e-14.
    """
    c3, c2, c1, c0 = _fixed_point_cubic(spec)

    def poly(u: float) -> float:
        return ((c3 * u + c2) * u + c1) * u + c0

    lo = 1e-15
    hi = spec.sigma_h2 + 10.0 * spec.epsilon**2 * spec.sigma_g2 + 1.0
    widen = 0
    while poly(lo) * poly(hi) > 0:
        widen += 1
        if widen > 5:
            raise RuntimeError("no sign change in fixed-point bracket after widening x10^5")
        hi *= 10.0
    while (hi - lo) > 1e-14 * hi:
        mid = 0.5 * (lo + hi)
        if poly(lo) * poly(mid) <= 0:
            hi = mid
        else:
            lo = mid
    root = 0.5 * (lo + hi)
    if abs(poly(root)) / max(root**3, 1e-300) > 1e-10:
        raise RuntimeError(f"fixed-point root residual too large at u={root}")
    return root


def kl_at_fixed_point(spec: AnalyticGaussianSpec, sigma_ems2: float) -> float:
    """KL(h, reconstruction of h) at a candidate solution variance.

    The reconstruction ``int f_inf g`` is Gaussian with variance
    ``sigma_ems^2 + sigma_g^2``, so the divergence from ``h`` is

        0.5 log((sigma_ems^2 + sigma_g^2) / sigma_h^2)
        + sigma_h^2 / (2 (sigma_ems^2 + sigma_g^2)) - 0.5,

    which vanishes exactly when ``sigma_ems^2 = sigma_f^2``.
    """
    if sigma_ems2 <= 0:
        raise ValueError("sigma_ems2 must be positive")
    v = sigma_ems2 + spec.sigma_g2
    return 0.5 * math.log(v / spec.sigma_h2) + spec.sigma_h2 / (2.0 * v) - 0.5


def exact_potential(spec: AnalyticGaussianSpec, sigma_ems_n2: float, x, y) -> np.ndarray:
    """Exact importance weight ``N(y; x, sigma_g^2) / N(y; mu, sigma_g^2 + s_n^2)``.

    ``sigma_ems_n2`` is the variance of the current exact iterate.
    Broadcasts over x and y batches; computed in log space.
    """
    if sigma_ems_n2 <= 0:
        raise ValueError("sigma_ems_n2 must be positive")
    xa = np.asarray(x, dtype=np.float64)
    ya = np.asarray(y, dtype=np.float64)
    num_var = spec.sigma_g2
    den_var = spec.sigma_g2 + sigma_ems_n2
    log_num = -0.5 * (ya - xa) ** 2 / num_var - 0.5 * math.log(2.0 * math.pi * num_var)
    log_den = -0.5 * (ya - spec.mu) ** 2 / den_var - 0.5 * math.log(2.0 * math.pi * den_var)
    return np.exp(log_num - log_den)


def ems_variance_step(spec: AnalyticGaussianSpec, s2: float) -> float:
    """One full iteration of the variance recursion: EM reweighting then smoothing."""
    a = spec.sigma_g2
    b = spec.sigma_h2
    v = s2 * ((a + b) * s2 + a * a) / (s2 + a) ** 2
    return v + spec.epsilon**2


def run_variance_schedule(spec: AnalyticGaussianSpec, sigma1_sq: float,
                          n_steps: int) -> np.ndarray:
    """Variances seen by the particle run's weighting, step by step.

    The particle scheme mutates before it first reweights, so step 1 sees
    the initial Gaussian convolved with the smoother only; every later
    step sees a full recursion update.  Entry ``k-1`` is the variance of
    the exact iterate the step-``k`` potential divides by.
    """
    if sigma1_sq <= 0:
        raise ValueError("sigma1_sq must be positive")
    out = np.empty(n_steps, dtype=np.float64)
    s2 = sigma1_sq + spec.epsilon**2
    for k in range(n_steps):
        out[k] = s2
        s2 = ems_variance_step(spec, s2)
    return out


def exact_potential_for_run(spec: AnalyticGaussianSpec, sigma1_sq: float,
                            n_steps: int):
    """Potential callable ``(x, y, iteration) -> weights`` for exact-weight runs.

    ``iteration`` is the cloud's time index, which is 2 right after the
    first mutation and at most ``n_steps + 1``.  Points are passed with a
    trailing singleton axis (the solvers' 1-d point convention); the
    trailing axis is squeezed before evaluation.
    """
    schedule = run_variance_schedule(spec, sigma1_sq, n_steps)

    def potential(x, y, iteration: int) -> np.ndarray:
        xs = np.asarray(x, dtype=np.float64)
        ys = np.asarray(y, dtype=np.float64)
        if xs.ndim and xs.shape[-1] == 1:
            xs = xs[..., 0]
        if ys.ndim and ys.shape[-1] == 1:
            ys = ys[..., 0]
        return exact_potential(spec, float(schedule[iteration - 2]), xs, ys)

    return potential

"""Experiment harness: builds the named problem, dispatches the selected
method, replicates runs over derived seeds (optionally across processes)
and writes metrics, density grids, traces and a replay manifest.

Replicate r of a run with seed s draws its randomness from the stream
seeded by (s, r), so single replicates can be replayed exactly and results
do not depend on worker scheduling.  Data simulation for the image
problems (blur noise, acquisition counts) uses a separate stream derived
from (s, DATA_STREAM_TAG) so that every replicate reconstructs the same
simulated data set.
"""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import analytic, grids, imaging, metrics, particles, problems
from .domain import FredholmProblem, as_points, trapezoid_rule
from .fileio import ExperimentConfig, write_image, write_manifest, write_metrics_csv

__all__ = [
    "run_experiment",
    "build_problem",
    "reconstructed_data_density",
    "resolve_workers",
    "DATA_STREAM_TAG",
]

DATA_STREAM_TAG = 0xDA7A
PER_ITERATION_SNAPSHOTS = (1, 5, 10, 20, 50, 100)

_DEBLUR_DEFAULTS = dict(height=75, width=150, b=32.0, sigma=0.02, noise=0.005)
_PET_DEFAULTS = dict(resolution=64, n_angles=64, n_offsets=95,
                     offset_range=1.45, sigma=0.02, total_counts=100_000)


@dataclass
class ProblemBundle:
    problem: FredholmProblem
    gaussian_spec: Optional[analytic.AnalyticGaussianSpec] = None
    sharp: Optional[imaging.ImageDensity] = None
    blurred: Optional[imaging.ImageDensity] = None
    phantom: Optional[imaging.ImageDensity] = None
    sinogram: Optional[np.ndarray] = None
    deblur_params: Optional[dict] = None


def build_problem(config: ExperimentConfig) -> ProblemBundle:
    """Construct the experiment's problem; image data is seed-stable."""
    if config.experiment == "analytic":
        spec = analytic.AnalyticGaussianSpec(mu=0.5, sigma_f2=0.043**2,
                                             sigma_g2=0.045**2, epsilon=config.epsilon)
        return ProblemBundle(problem=problems.analytic_gaussian_problem(),
                             gaussian_spec=spec)
    if config.experiment == "mixture":
        return ProblemBundle(problem=problems.gaussian_mixture_problem())
    data_rng = np.random.default_rng(np.random.SeedSequence([config.seed, DATA_STREAM_TAG]))
    if config.experiment == "deblur":
        p = _DEBLUR_DEFAULTS
        sharp = imaging.synthetic_sharp_image(p["height"], p["width"])
        problem, blurred = imaging.motion_deblur_problem(
            sharp, b=p["b"], sigma=p["sigma"], noise_level=p["noise"], rng=data_rng)
        return ProblemBundle(problem=problem, sharp=sharp, blurred=blurred,
                             deblur_params=dict(b=p["b"], sigma=p["sigma"]))
    if config.experiment == "pet":
        p = _PET_DEFAULTS
        phantom = imaging.shepp_logan_phantom(p["resolution"])
        problem, sinogram = imaging.pet_problem(
            phantom, n_angles=p["n_angles"], n_offsets=p["n_offsets"],
            offset_range=p["offset_range"], sigma=p["sigma"],
            total_counts=p["total_counts"], rng=data_rng)
        return ProblemBundle(problem=problem, phantom=phantom, sinogram=sinogram)
    raise ValueError(f"experiment {config.experiment!r} has no problem builder")


def reconstructed_data_density(problem: FredholmProblem, density_fn,
                               x_nodes: int = 2001, chunk: int = 256):
    """Push a solution density through the kernel: ``h_hat(y) = int f g``."""
    pts, w = trapezoid_rule(problem.x_domain, x_nodes)
    fw = np.asarray(density_fn(pts), dtype=np.float64).ravel() * w

    def h_hat(y):
        ys = as_points(y, problem.y_domain.dim)
        flat = ys.reshape(-1, problem.y_domain.dim)
        out = np.zeros(flat.shape[0])
        for start in range(0, pts.shape[0], chunk):
            block = np.asarray(problem.kernel.evaluate(
                pts[start:start + chunk, None, :], flat[None, :, :]), dtype=np.float64)
            out += fw[start:start + chunk] @ block
        return out.reshape(ys.shape[:-1])

    return h_hat


def resolve_workers(n_tasks: int) -> int:
    cap = os.environ.get("FREDHOLM_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_tasks, limit))


def _ems_config(config: ExperimentConfig, initial_density=None) -> particles.EmsConfig:
    return particles.EmsConfig(
        n_particles=config.N,
        n_iterations=config.n_iterations,
        epsilon=config.epsilon,
        n_replicates=config.m_or_n,
        resample_threshold=config.resample_threshold,
        seed=config.seed,
        initial_density=initial_density,
    )


def _exact_setup(bundle: ProblemBundle, config: ExperimentConfig):
    spec = bundle.gaussian_spec
    if spec is None:
        raise ValueError("method smc-exact needs the analytic experiment")
    sigma1_sq = spec.sigma_f2
    sd = math.sqrt(sigma1_sq)

    def initial(rng, n):
        draws = spec.mu + sd * rng.standard_normal(n)
        return np.clip(draws, 0.0, 1.0)[:, None]

    potential = analytic.exact_potential_for_run(spec, sigma1_sq, config.n_iterations)
    return initial, potential


def _solve(bundle: ProblemBundle, config: ExperimentConfig,
           rng: np.random.Generator, keep_estimates: bool):
    """Run the configured method; returns a dict describing the solution."""
    problem = bundle.problem
    method = config.method
    t0 = time.perf_counter()
    if method in ("smc", "smc-exact"):
        if method == "smc-exact":
            initial, potential = _exact_setup(bundle, config)
        else:
            initial, potential = None, None
        result = particles.run(problem, _ems_config(config, initial), rng,
                               exact_potential=potential, keep_estimates=keep_estimates)
        est = result.estimate
        mean, var = est.mean(), est.variance()
        return dict(density=est, mean=float(mean[0]), var=float(var[0]),
                    ess_trace=[(d.iteration, d.ess, d.resampled) for d in result.diagnostics],
                    estimates=result.estimates, runtime=time.perf_counter() - t0)
    if method in ("em", "ems-gaussian", "ems-3point", "ib"):
        if problem.x_domain.dim != 1:
            raise ValueError(f"method {method!r} runs on 1-d problems only")
        model = grids.discretize_problem(problem, config.B, config.D)
        if method == "ib":
            samples = problem.data.sample(rng, config.m_or_n)
            model = grids.ib_weights(samples[:, 0], model)
        if method == "ems-gaussian":
            smoother = grids.smoothing_matrix_gaussian(model.x_edges, config.epsilon)
        elif method == "ems-3point":
            smoother = grids.smoothing_matrix_3point(config.B)
        else:
            smoother = None
        final, history = grids.run_grid(model, smoother, config.n_iterations)
        mean, var = final.moments()
        return dict(density=final.f_density(), mean=mean, var=var, ess_trace=[],
                    grid_history=history, model=final, runtime=time.perf_counter() - t0)
    if method == "rl":
        if bundle.blurred is None:
            raise ValueError("method rl needs the deblur experiment")
        est_img = imaging.deblur_richardson_lucy(
            bundle.blurred, bundle.deblur_params["b"], bundle.deblur_params["sigma"],
            config.n_iterations)
        return dict(density=est_img.density(), mean=None, var=None, ess_trace=[],
                    image=est_img, runtime=time.perf_counter() - t0)
    raise ValueError(f"method {method!r} has no solver")


def _estimate_to_image(density_fn, reference: imaging.ImageDensity) -> np.ndarray:
    """Render a density to the reference pixel grid as normalized masses."""
    vals = np.asarray(density_fn(reference.center_points()), dtype=np.float64)
    vals = np.clip(vals, 0.0, None) * reference.pixel_area
    total = vals.sum()
    if total <= 0:
        raise ValueError("estimate has no mass on the image grid")
    return (vals / total).reshape(reference.shape)


def _score(bundle: ProblemBundle, config: ExperimentConfig, solved: dict) -> dict:
    problem = bundle.problem
    density = solved["density"]
    out = dict(mean=solved["mean"], var=solved["var"],
               runtime_ms=solved["runtime"] * 1000.0,
               ess_trace=solved["ess_trace"])
    if problem.x_domain.dim == 1:
        out["ise_f"] = metrics.ise(density, problem.truth, problem.x_domain, nodes=1000)
        h_hat = reconstructed_data_density(problem, density)
        out["kl"] = metrics.kl_numeric(problem.data.density, h_hat, problem.y_domain,
                                       nodes=10_000)
        out["match_distance"] = None
        edges = np.linspace(problem.x_domain.lower[0], problem.x_domain.upper[0],
                            config.B + 1)
        probe_points = 0.5 * (edges[:-1] + edges[1:])
        out["probe_values"] = np.asarray(density(probe_points[:, None])).ravel()
        out["probe_points"] = probe_points
        grid_pts = np.linspace(problem.x_domain.lower[0], problem.x_domain.upper[0], 1000)
        out["density_grid"] = np.asarray(density(grid_pts[:, None])).ravel()
        out["grid_points"] = grid_pts
    else:
        reference = bundle.sharp if bundle.sharp is not None else bundle.phantom
        est_pixels = _estimate_to_image(density, reference)
        truth_pixels = reference.pixels
        area = reference.pixel_area
        diff = est_pixels / area - truth_pixels / area
        out["ise_f"] = float((diff * diff).sum() * area)
        out["kl"] = None
        out["match_distance"] = metrics.match_distance(est_pixels, truth_pixels)
        out["probe_values"] = (est_pixels / area).ravel()
        out["probe_points"] = None
        out["est_pixels"] = est_pixels
    return out


def _replicate(config: ExperimentConfig, r: int) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, r]))
    bundle = build_problem(config)
    keep = config.emit_per_iteration and r == 0
    solved = _solve(bundle, config, rng, keep_estimates=keep)
    scored = _score(bundle, config, solved)
    scored["replicate"] = r
    if keep and solved.get("estimates"):
        snaps = {}
        for it in PER_ITERATION_SNAPSHOTS:
            if it <= len(solved["estimates"]):
                est = solved["estimates"][it - 1]
                if bundle.problem.x_domain.dim == 1:
                    snaps[it] = np.asarray(est(scored["grid_points"][:, None])).ravel()
                else:
                    ref = bundle.sharp if bundle.sharp is not None else bundle.phantom
                    snaps[it] = _estimate_to_image(est, ref)
        scored["snapshots"] = snaps
    if keep and solved.get("grid_history"):
        snaps = {}
        model = solved["model"]
        for it in PER_ITERATION_SNAPSHOTS:
            if it < len(solved["grid_history"]):
                snaps[it] = solved["grid_history"][it] / model.x_width
        scored["snapshots"] = snaps
    return scored


def _write_outputs(config: ExperimentConfig, results: list, out_dir: Path) -> None:
    rows = []
    for res in results:
        rows.append({
            "replicate": res["replicate"], "method": config.method,
            "N": config.N, "M": config.m_or_n, "epsilon": config.epsilon,
            "ise_f": res["ise_f"], "mse_p95": None, "kl": res["kl"],
            "match_distance": res["match_distance"], "mean": res["mean"],
            "variance": res["var"], "runtime_ms": res["runtime_ms"],
        })
    write_metrics_csv(rows, out_dir / "metrics.csv")

    probe_stack = np.stack([res["probe_values"] for res in results])
    bundle = build_problem(config)
    if bundle.problem.x_domain.dim == 1:
        probes = results[0]["probe_points"]
        truth_vals = np.asarray(bundle.problem.truth(probes[:, None])).ravel()
    else:
        reference = bundle.sharp if bundle.sharp is not None else bundle.phantom
        truth_vals = (reference.pixels / reference.pixel_area).ravel()
    sq = (probe_stack - truth_vals[None, :]) ** 2
    mse = sq.mean(axis=0)
    rank = int(np.ceil(0.95 * mse.size)) - 1
    mse_p95 = float(np.sort(mse)[rank])

    def _mean(key):
        vals = [res[key] for res in results if res[key] is not None]
        return float(np.mean(vals)) if vals else None

    aggregate = [{
        "replicate": "aggregate", "method": config.method, "N": config.N,
        "M": config.m_or_n, "epsilon": config.epsilon, "ise_f": _mean("ise_f"),
        "mse_p95": mse_p95, "kl": _mean("kl"),
        "match_distance": _mean("match_distance"), "mean": _mean("mean"),
        "variance": _mean("var"), "runtime_ms": _mean("runtime_ms"),
    }]
    write_metrics_csv(aggregate, out_dir / "aggregate.csv")

    ess_lines = ["replicate,iteration,ess,resampled"]
    for res in results:
        for iteration, ess, resampled in res["ess_trace"]:
            ess_lines.append(f"{res['replicate']},{iteration},{repr(ess)},{int(resampled)}")
    (out_dir / "ess_trace.csv").write_text("\n".join(ess_lines) + "\n", encoding="utf-8")

    if bundle.problem.x_domain.dim == 1:
        grid = results[0]["grid_points"]
        cols = ["x"] + [f"replicate_{res['replicate']}" for res in results]
        lines = [",".join(cols)]
        stack = np.stack([res["density_grid"] for res in results])
        for i, x in enumerate(grid):
            lines.append(",".join([repr(float(x))] + [repr(float(v)) for v in stack[:, i]]))
        (out_dir / "density.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    else:
        for res in results:
            write_image(res["est_pixels"], out_dir / f"estimate_r{res['replicate']:03d}.pgm")
        if bundle.blurred is not None:
            write_image(bundle.blurred.pixels, out_dir / "data_blurred.pgm")
        if bundle.phantom is not None:
            write_image(bundle.phantom.pixels, out_dir / "truth_phantom.pgm")

    for res in results:
        for it, snap in res.get("snapshots", {}).items():
            if snap.ndim == 1:
                lines = ["x,density"] + [f"{repr(float(x))},{repr(float(v))}"
                                         for x, v in zip(results[0]["grid_points"], snap)]
                (out_dir / f"density_iter{it:03d}.csv").write_text(
                    "\n".join(lines) + "\n", encoding="utf-8")
            else:
                write_image(snap, out_dir / f"estimate_iter{it:03d}.pgm")


def run_experiment(config: ExperimentConfig) -> list:
    """Run all replicates of the configured experiment and write artifacts.

    Returns one :class:`fredholm.metrics.MetricsReport` per replicate.
    Replicates spread over worker processes (capped by FREDHOLM_THREADS);
    outputs are identical to a serial run.
    """
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = resolve_workers(config.replicates)
    if workers > 1 and config.replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, [config] * config.replicates,
                                    range(config.replicates)))
    else:
        results = [_replicate(config, r) for r in range(config.replicates)]
    _write_outputs(config, results, out_dir)
    write_manifest(config, out_dir / "manifest", extra={"workers": workers})
    reports = []
    for res in results:
        reports.append(metrics.MetricsReport(
            ise_f=res["ise_f"], kl=res["kl"], match_distance=res["match_distance"],
            mean_est=res["mean"], var_est=res["var"],
            ess_trace=[e[1] for e in res["ess_trace"]],
            runtime_seconds=res["runtime_ms"] / 1000.0))
    return reports

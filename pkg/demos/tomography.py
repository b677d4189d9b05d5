"""Reconstruct the head phantom from Poisson projection counts.

The acquisition projects the 64x64 phantom onto 64 angles and 95 offsets
with a narrow Gaussian point-spread, draws 1e5 Poisson counts, and hands
the particle solver nothing but count-weighted draws from the sinogram.
Reconstruction snapshots are written as graymaps so the sharpening over
iterations is visible; the squared-error trace is printed.
"""
import pathlib
import warnings

import numpy as np

import fredholm as fh
from fredholm import imaging
from fredholm.fileio import write_image

out = pathlib.Path(__file__).parent / "out_pet"
out.mkdir(exist_ok=True)
rng = np.random.default_rng(0)

phantom = imaging.shepp_logan_phantom(64)
problem, sinogram = imaging.pet_problem(phantom, n_angles=64, n_offsets=95,
                                        offset_range=1.45, sigma=0.02,
                                        total_counts=100_000, rng=rng)
write_image(phantom.pixels, out / "phantom.pgm")
write_image(sinogram, out / "sinogram_counts.pgm")
print(f"sinogram holds {int(sinogram.sum())} counts over {sinogram.size} cells")

cfg = fh.EmsConfig(n_particles=5000, n_iterations=100, epsilon=1e-3, seed=0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    res = fh.run(problem, cfg, keep_estimates=True)

area = phantom.pixel_area
pts = phantom.center_points()
print("\niteration   ISE")
for it in (1, 5, 10, 20, 50, 100):
    est = res.estimates[it - 1]
    vals = np.clip(est.density(pts, chunk_size=256), 0, None) * area
    px = (vals / vals.sum()).reshape(phantom.shape)
    write_image(px, out / f"reconstruction_iter{it:03d}.pgm")
    ise = float((((px - phantom.pixels) / area) ** 2).sum() * area)
    print(f"{it:>9}   {ise:.4f}")

print(f"\nsnapshots written to {out}")
print("The error collapses over the first ten iterations and then plateaus:")
print("the recursion has found its fixed point.")

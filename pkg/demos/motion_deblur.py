"""Recover a sharp scene from horizontal motion blur.

A synthetic scene is dragged 32 pixels horizontally (box kernel) with a
slight vertical Gaussian wobble and 0.5 percent multiplicative noise. Both
the multiplicative grid deconvolution and the particle solver see only the
blurred frame; graymaps of every stage land in demos/out_deblur/.
"""
import pathlib
import warnings

import numpy as np

import fredholm as fh
from fredholm import imaging
from fredholm.fileio import write_image

out = pathlib.Path(__file__).parent / "out_deblur"
out.mkdir(exist_ok=True)
rng = np.random.default_rng(0)

sharp = imaging.synthetic_sharp_image(75, 150)
problem, blurred = imaging.motion_deblur_problem(sharp, b=32, sigma=0.02,
                                                 noise_level=0.005, rng=rng)
write_image(sharp.pixels, out / "sharp.pgm")
write_image(blurred.pixels, out / "blurred.pgm")

area = sharp.pixel_area


def score(pixels, name):
    ise = float((((pixels - sharp.pixels) / area) ** 2).sum() * area)
    md = fh.match_distance(pixels, sharp.pixels)
    print(f"{name:<22} ISE {ise:7.4f}   match distance {md:.5f}")


rl = imaging.deblur_richardson_lucy(blurred, b=32, sigma=0.02, n_iterations=100)
write_image(rl.pixels, out / "deconvolved_grid.pgm")
score(rl.pixels, "grid deconvolution")

cfg = fh.EmsConfig(n_particles=2000, n_iterations=100, epsilon=1e-3, seed=0)
with warnings.catch_warnings():
    warnings.simplefilter("ignore", RuntimeWarning)
    res = fh.run(problem, cfg)
vals = np.clip(res.estimate.density(sharp.center_points(), chunk_size=256), 0, None)
smc_px = vals * area
smc_px = (smc_px / smc_px.sum()).reshape(sharp.shape)
write_image(smc_px, out / "deconvolved_particle.pgm")
score(smc_px, "particle solver")

print(f"\ngraymaps written to {out}")
print("The particle reconstruction is visibly smoother; the grid one is")
print("sharper here because a 32-pixel blur amplifies this noise level only")
print("mildly at 100 iterations.")

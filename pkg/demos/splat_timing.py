"""Rasterizer cost as the Gaussian count grows, and agreement with the oracle.

    python demos/splat_timing.py
"""

import numpy as np

from dataclasses import replace

from gomrecon.splat import DEFAULT_CONFIG, rasterize, rasterize_oracle
from gomrecon.splat.bench import bench_camera, bench_gaussians, time_render

small = bench_gaussians(300)
cam = bench_camera(96)
a, b = rasterize(small, cam), rasterize_oracle(small, cam)
# pixels that stop early may drop up to their remaining transmittance
print(f"tiled vs oracle, 300 Gaussians at 96^2: max |diff| {np.abs(a.image - b.image).max():.2e}")
no_exit = replace(DEFAULT_CONFIG, t_min=0.0)
a = rasterize(small, cam, no_exit)
b = rasterize_oracle(small, cam, no_exit)
print(f"same with early exit disabled:           max |diff| {np.abs(a.image - b.image).max():.2e}")

for res in (256, 512):
    cam = bench_camera(res)
    for n in (10_000, 50_000, 100_000):
        print(f"{n:>7} Gaussians at {res}^2: {time_render(bench_gaussians(n), cam):8.1f} ms/frame")

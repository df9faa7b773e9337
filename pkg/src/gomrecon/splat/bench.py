"""Synthetic workloads for rasterizer timing."""

from __future__ import annotations

import time

import numpy as np

from .camera import CameraModel, orbit_camera
from .project import DEFAULT_CONFIG, RasterConfig
from .rasterize import rasterize

BODY_EXTENT = np.array([0.35, 0.85, 0.2])  # half-axes of the ellipsoidal shell, metres
BODY_CENTER = np.array([0.0, 1.0, 0.0])


def bench_gaussians(n: int, seed: int = 0):
    """``n`` surface-sized Gaussians on an ellipsoidal shell, roughly avatar-shaped.

    Each Gaussian covers about ``area / n`` of the shell, so the depth
    complexity stays constant as ``n`` grows (as it does under subdivision).
    """
    if n < 1:
        raise ValueError(f"Gaussian count must be >= 1, got {n}")
    rng = np.random.default_rng([seed, n])
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    mu = BODY_CENTER + d * BODY_EXTENT
    a, b, c = BODY_EXTENT
    area = 4 * np.pi * ((a * b) ** 1.6 + (a * c) ** 1.6 + (b * c) ** 1.6) ** (1 / 1.6) / 3 ** (1 / 1.6)
    s = np.sqrt(area / n) * rng.uniform(0.35, 0.6, size=(n, 3))
    s[:, 2] *= 0.2
    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], 1)
    M = R * s[:, None, :]
    sigma = M @ M.transpose(0, 2, 1)
    color = rng.uniform(0.1, 0.9, size=(n, 3))
    opacity = rng.uniform(0.5, 0.99, size=n)
    return mu, sigma, color, opacity


def bench_camera(resolution: int) -> CameraModel:
    return orbit_camera(0.3, 0.1, 3.2, BODY_CENTER, focal=1.55 * resolution, width=resolution, height=resolution)


def time_render(gaussians, cam: CameraModel, repeats: int = 3, cfg: RasterConfig = DEFAULT_CONFIG,
                workers=None) -> float:
    """Median wall time of one frame in milliseconds, after a warm-up frame."""
    rasterize(gaussians, cam, cfg, workers)
    times = []
    for _ in range(max(1, repeats)):
        t0 = time.perf_counter()
        rasterize(gaussians, cam, cfg, workers)
        times.append(1e3 * (time.perf_counter() - t0))
    return float(np.median(times))

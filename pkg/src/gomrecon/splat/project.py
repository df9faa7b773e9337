"""EWA projection of world Gaussians to screen-space splats, with its VJP."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraModel


@dataclass(frozen=True)
class RasterConfig:
    tile: int = 16
    near: float = 0.01
    low_pass: float = 0.3
    alpha_cap: float = 0.999
    alpha_floor: float = 1.0 / 255.0
    t_min: float = 1e-4
    sigma_extent: float = 3.0


DEFAULT_CONFIG = RasterConfig()
# numerically smooth settings for finite-difference checks of whole pipelines
SMOOTH_CONFIG = RasterConfig(alpha_floor=0.0, t_min=0.0)


@dataclass(frozen=True)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float


@dataclass
class Projection:
    """Screen-space quantities for every input Gaussian (float64)."""

    cam_mean: np.ndarray  # (G, 3)
    mean2d: np.ndarray  # (G, 2)
    cov2d: np.ndarray  # (G, 2, 2), low-pass included
    conic: np.ndarray  # (G, 3) inverse covariance (a, b, c)
    depth: np.ndarray  # (G,)
    radius: np.ndarray  # (G,) screen-space extent in pixels
    M: np.ndarray  # (G, 2, 3) Jacobian times camera rotation
    valid: np.ndarray  # (G,) bool
    n_culled: int
    n_singular: int


def project(mu, sigma, opacity, cam: CameraModel, cfg: RasterConfig = DEFAULT_CONFIG) -> Projection:
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    opacity = np.asarray(opacity, dtype=np.float64)
    W, tw = cam.R, cam.t
    m = mu @ W.T + tw
    x, y, z = m[:, 0], m[:, 1], m[:, 2]
    in_front = z > cfg.near
    zs = np.where(in_front, z, 1.0)
    fx, fy = cam.fx, cam.fy
    mean2d = np.stack([fx * x / zs + cam.cx, fy * y / zs + cam.cy], axis=1)
    J = np.zeros((len(mu), 2, 3))
    J[:, 0, 0] = fx / zs
    J[:, 0, 2] = -fx * x / (zs * zs)
    J[:, 1, 1] = fy / zs
    J[:, 1, 2] = -fy * y / (zs * zs)
    M = J @ W
    cov = M @ sigma @ np.swapaxes(M, 1, 2)
    a = cov[:, 0, 0] + cfg.low_pass
    b = 0.5 * (cov[:, 0, 1] + cov[:, 1, 0])
    c = cov[:, 1, 1] + cfg.low_pass
    cov2d = np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], -2)
    det = a * c - b * b
    ok_det = det > 0
    dets = np.where(ok_det, det, 1.0)
    conic = np.stack([c / dets, -b / dets, a / dets], axis=1)
    lam = 0.5 * (a + c) + np.sqrt(np.maximum(0.25 * (a - c) ** 2 + b * b, 0.0))
    # extent beyond which opacity * gaussian < alpha_floor; never below sigma_extent
    if cfg.alpha_floor > 0:
        with np.errstate(divide="ignore"):
            ln = np.log(np.maximum(opacity, 1e-300) / cfg.alpha_floor)
        ext = np.maximum(cfg.sigma_extent, np.sqrt(2.0 * np.maximum(ln, 0.0)))
        contributes = opacity >= cfg.alpha_floor
    else:
        ext = np.full(len(mu), np.inf)
        contributes = np.ones(len(mu), dtype=bool)
    radius = ext * np.sqrt(np.maximum(lam, 0.0))
    valid = in_front & ok_det & contributes
    return Projection(
        cam_mean=m, mean2d=mean2d, cov2d=cov2d, conic=conic, depth=z, radius=radius, M=M,
        valid=valid, n_culled=int((~in_front).sum()), n_singular=int((in_front & ~ok_det).sum()),
    )


def project_gaussian(mu, sigma, color, opacity, cam: CameraModel,
                     cfg: RasterConfig = DEFAULT_CONFIG) -> Splat2D | None:
    """Project one Gaussian; ``None`` when culled by the near plane."""
    p = project(np.asarray(mu, dtype=np.float64)[None], np.asarray(sigma, dtype=np.float64)[None],
                np.array([opacity], dtype=np.float64), cam, cfg)
    if p.n_culled:
        return None
    return Splat2D(p.mean2d[0], p.cov2d[0], float(p.depth[0]), np.asarray(color), float(opacity))


def project_backward(p: Projection, sigma, cam: CameraModel, g_mean2d, g_conic):
    """Chain screen-space gradients back to world ``mu`` and ``sigma``.

    ``g_conic`` holds gradients w.r.t. the conic entries (a, b, c) where the
    off-diagonal term enters the exponent once as ``-b dx dy``.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    G = len(p.depth)
    v = p.valid
    a, b, c = p.cov2d[:, 0, 0], p.cov2d[:, 0, 1], p.cov2d[:, 1, 1]
    det = np.where(v, a * c - b * b, 1.0)
    d2 = det * det
    ga, gb, gc = g_conic[:, 0], g_conic[:, 1], g_conic[:, 2]
    g_a = (-ga * c * c + gb * b * c - gc * b * b) / d2
    g_b = (2 * ga * b * c - gb * (a * c + b * b) + 2 * gc * a * b) / d2
    g_c = (-ga * b * b + gb * a * b - gc * a * a) / d2
    gcov = np.zeros((G, 2, 2))
    gcov[:, 0, 0] = g_a
    gcov[:, 1, 1] = g_c
    gcov[:, 0, 1] = gcov[:, 1, 0] = 0.5 * g_b
    gcov[~v] = 0.0

    M = p.M
    g_sigma = np.swapaxes(M, 1, 2) @ gcov @ M
    gM = gcov @ M @ (sigma + np.swapaxes(sigma, 1, 2))
    W = cam.R
    gJ = gM @ W.T

    x, y, z = p.cam_mean[:, 0], p.cam_mean[:, 1], np.where(v, p.cam_mean[:, 2], 1.0)
    fx, fy = cam.fx, cam.fy
    gmx, gmy = np.where(v, g_mean2d[:, 0], 0.0), np.where(v, g_mean2d[:, 1], 0.0)
    z2, z3 = z * z, z * z * z
    gm = np.zeros((G, 3))
    gm[:, 0] = gmx * fx / z + gJ[:, 0, 2] * (-fx / z2)
    gm[:, 1] = gmy * fy / z + gJ[:, 1, 2] * (-fy / z2)
    gm[:, 2] = (gmx * (-fx * x / z2) + gmy * (-fy * y / z2)
                + gJ[:, 0, 0] * (-fx / z2) + gJ[:, 0, 2] * (2 * fx * x / z3)
                + gJ[:, 1, 1] * (-fy / z2) + gJ[:, 1, 2] * (2 * fy * y / z3))
    gm[~v] = 0.0
    g_sigma[~v] = 0.0
    return gm @ W, g_sigma

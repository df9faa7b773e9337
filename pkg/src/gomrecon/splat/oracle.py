"""Reference compositor: every pixel against every Gaussian, no tiles, no early exit."""

from __future__ import annotations

import numpy as np

from .camera import CameraModel
from .project import DEFAULT_CONFIG, RasterConfig, project
from .rasterize import RenderOutput, _as_arrays


def rasterize_oracle(gaussians, cam: CameraModel, cfg: RasterConfig = DEFAULT_CONFIG) -> RenderOutput:
    mu, sigma, color, opacity = _as_arrays(gaussians)
    color = np.asarray(color, dtype=np.float64).reshape(-1, 3)
    opacity = np.asarray(opacity, dtype=np.float64).reshape(-1)
    W, H = int(cam.width), int(cam.height)
    p = project(mu, sigma, opacity, cam, cfg)
    ys, xs = np.mgrid[0:H, 0:W]
    px, py = xs.ravel().astype(np.float64), ys.ravel().astype(np.float64)
    T = np.ones(H * W)
    C = np.zeros((H * W, 3))
    idx = np.nonzero(p.valid)[0]
    for g in idx[np.lexsort((idx, p.depth[idx]))]:
        dx = px - p.mean2d[g, 0]
        dy = py - p.mean2d[g, 1]
        a_, b_, c_ = p.conic[g]
        power = -0.5 * (a_ * dx * dx + c_ * dy * dy) - b_ * dx * dy
        alpha = np.minimum(opacity[g] * np.exp(np.minimum(power, 0.0)), cfg.alpha_cap)
        alpha = np.where((power > 0) | (alpha < cfg.alpha_floor), 0.0, alpha)
        C += (T * alpha)[:, None] * color[g]
        T = T * (1.0 - alpha)
    return RenderOutput(C.reshape(H, W, 3), (1.0 - T).reshape(H, W), p.n_culled, p.n_singular)

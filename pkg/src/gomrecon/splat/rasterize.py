"""Tile-binned front-to-back Gaussian rasterization and its exact VJP."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..diff import Tensor, ops
from . import _kernels
from .camera import CameraModel
from .project import DEFAULT_CONFIG, Projection, RasterConfig, project, project_backward

_POOLS: dict[int, ThreadPoolExecutor] = {}


def worker_count() -> int:
    """Worker threads for tile partitioning, from ``LGOM_THREADS`` (default 1)."""
    raw = os.environ.get("LGOM_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"LGOM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"LGOM_THREADS must be >= 1, got {n}")
    return n


def _run_tiles(fn, n_tiles: int, args: tuple, workers: int | None = None):
    workers = worker_count() if workers is None else workers
    if workers <= 1 or n_tiles <= 1:
        fn(0, n_tiles, *args)
        return
    bounds = np.linspace(0, n_tiles, min(workers, n_tiles) + 1).astype(int)
    pool = _POOLS.get(workers)
    if pool is None:
        pool = _POOLS[workers] = ThreadPoolExecutor(max_workers=workers)
    futures = [pool.submit(fn, int(a), int(b), *args) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    for f in futures:
        f.result()


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    n_culled: int = 0
    n_singular: int = 0


@dataclass
class _Binning:
    order: np.ndarray  # surviving gaussians sorted by (depth, index)
    pair_gauss: np.ndarray  # per (tile, gaussian) pair, index into the input arrays
    tile_start: np.ndarray
    tile_end: np.ndarray
    tiles_x: int
    tiles_y: int


def _bin(p: Projection, cam: CameraModel, cfg: RasterConfig) -> _Binning:
    W, H, ts = int(cam.width), int(cam.height), cfg.tile
    tiles_x, tiles_y = -(-W // ts), -(-H // ts)
    n_tiles = tiles_x * tiles_y
    idx = np.nonzero(p.valid)[0]
    order = idx[np.lexsort((idx, p.depth[idx]))]
    mx, my = p.mean2d[order, 0], p.mean2d[order, 1]
    r = p.radius[order]
    with np.errstate(invalid="ignore", over="ignore"):
        xmin = np.clip(np.ceil(mx - r), 0, W - 1)
        xmax = np.clip(np.floor(mx + r), -1, W - 1)
        ymin = np.clip(np.ceil(my - r), 0, H - 1)
        ymax = np.clip(np.floor(my + r), -1, H - 1)
    inf_r = ~np.isfinite(r)
    xmin[inf_r], ymin[inf_r], xmax[inf_r], ymax[inf_r] = 0, 0, W - 1, H - 1
    hit = (xmax >= xmin) & (ymax >= ymin) & (mx - r <= W - 1) & (mx + r >= 0) & (my - r <= H - 1) & (my + r >= 0)
    hit |= inf_r
    order = order[hit]
    tx0 = (xmin[hit] // ts).astype(np.int64)
    tx1 = (xmax[hit] // ts).astype(np.int64)
    ty0 = (ymin[hit] // ts).astype(np.int64)
    ty1 = (ymax[hit] // ts).astype(np.int64)
    nx, ny = tx1 - tx0 + 1, ty1 - ty0 + 1
    counts = nx * ny
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(order)), counts)
    local = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
    tile_ids = (ty0[owner] + local // nx[owner]) * tiles_x + tx0[owner] + local % nx[owner]
    perm = np.argsort(tile_ids, kind="stable")
    pair_gauss = order[owner[perm]].astype(np.int64)
    sorted_tiles = tile_ids[perm]
    tile_start = np.searchsorted(sorted_tiles, np.arange(n_tiles), side="left").astype(np.int64)
    tile_end = np.searchsorted(sorted_tiles, np.arange(n_tiles), side="right").astype(np.int64)
    return _Binning(order, pair_gauss, tile_start, tile_end, tiles_x, tiles_y)


def _cutoff(opacity: np.ndarray, cfg: RasterConfig) -> np.ndarray:
    if cfg.alpha_floor <= 0:
        return np.full(len(opacity), -np.inf)
    with np.errstate(divide="ignore"):
        return np.log(cfg.alpha_floor / opacity) - 1e-9


@dataclass
class _Forward:
    proj: Projection
    binning: _Binning
    color: np.ndarray
    opacity: np.ndarray
    trans: np.ndarray
    n_used: np.ndarray
    out: RenderOutput


def _forward(mu, sigma, color, opacity, cam: CameraModel, cfg: RasterConfig, workers=None) -> _Forward:
    color = np.ascontiguousarray(color, dtype=np.float64).reshape(-1, 3)
    opacity = np.ascontiguousarray(opacity, dtype=np.float64).reshape(-1)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1, 3)
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1, 3, 3)
    if not (len(mu) == len(sigma) == len(color) == len(opacity)):
        raise ValueError("gaussian attribute arrays have different lengths")
    W, H = int(cam.width), int(cam.height)
    p = project(mu, sigma, opacity, cam, cfg)
    b = _bin(p, cam, cfg)
    cutoff = _cutoff(opacity, cfg)
    image = np.zeros((H, W, 3))
    trans = np.ones((H, W))
    n_used = np.zeros((H, W), dtype=np.int64)
    if len(b.pair_gauss):
        mean2d = np.ascontiguousarray(p.mean2d)
        conic = np.ascontiguousarray(p.conic)
        _run_tiles(_kernels.forward_tiles, b.tiles_x * b.tiles_y,
                   (b.tile_start, b.tile_end, b.pair_gauss, mean2d, conic, color, opacity, cutoff,
                    W, H, cfg.tile, b.tiles_x, cfg.alpha_cap, cfg.alpha_floor, cfg.t_min,
                    image, trans, n_used), workers)
    out = RenderOutput(image, 1.0 - trans, p.n_culled, p.n_singular)
    return _Forward(p, b, color, opacity, trans, n_used, out)


def _as_arrays(gaussians):
    if hasattr(gaussians, "mu"):
        return gaussians.mu, gaussians.sigma, gaussians.color, gaussians.opacity
    return gaussians


def rasterize(gaussians, cam: CameraModel, cfg: RasterConfig = DEFAULT_CONFIG, workers=None) -> RenderOutput:
    """Render ``WorldGaussians`` (or a ``(mu, sigma, color, opacity)`` tuple)."""
    return _forward(*_as_arrays(gaussians), cam, cfg, workers).out


def _backward(fw: _Forward, sigma, cam: CameraModel, cfg: RasterConfig, grad_image, grad_alpha, workers=None):
    W, H = int(cam.width), int(cam.height)
    grad_image = np.ascontiguousarray(grad_image, dtype=np.float64)
    grad_alpha = np.ascontiguousarray(grad_alpha, dtype=np.float64)
    if grad_image.shape != (H, W, 3) or grad_alpha.shape != (H, W):
        raise ValueError(f"gradient shapes {grad_image.shape}, {grad_alpha.shape} do not match a {H}x{W} render")
    b, p = fw.binning, fw.proj
    G = len(fw.opacity)
    pair_grad = np.zeros((len(b.pair_gauss), 9))
    if len(b.pair_gauss):
        _run_tiles(_kernels.backward_tiles, b.tiles_x * b.tiles_y,
                   (b.tile_start, b.tile_end, b.pair_gauss, np.ascontiguousarray(p.mean2d),
                    np.ascontiguousarray(p.conic), fw.color, fw.opacity, _cutoff(fw.opacity, cfg), W, H, cfg.tile, b.tiles_x,
                    cfg.alpha_cap, cfg.alpha_floor, fw.trans, fw.n_used, grad_image, grad_alpha,
                    pair_grad), workers)
    per = _kernels.reduce_pairs(b.pair_gauss, pair_grad, G)
    d_mu, d_sigma = project_backward(p, sigma, cam, per[:, 0:2], per[:, 2:5])
    return d_mu, d_sigma, per[:, 5:8], per[:, 8]


def rasterize_backward(gaussians, cam: CameraModel, grad_image, grad_alpha,
                       cfg: RasterConfig = DEFAULT_CONFIG, workers=None):
    """VJP of :func:`rasterize`; returns gradients for (mu, sigma, color, opacity).

    Depth order and the alpha clamps are treated as constants.
    """
    mu, sigma, color, opacity = _as_arrays(gaussians)
    fw = _forward(mu, sigma, color, opacity, cam, cfg, workers)
    return _backward(fw, np.asarray(sigma, dtype=np.float64), cam, cfg, grad_image, grad_alpha, workers)


def active_signature(mu, sigma, color, opacity, cam: CameraModel, cfg: RasterConfig = DEFAULT_CONFIG):
    """Hashable summary of which (pixel, gaussian) pairs pass the clamps.

    Used to keep finite-difference checks off the discontinuities introduced
    by the opacity floor, the cap, the early exit and the depth order.
    """
    fw = _forward(mu, sigma, color, opacity, cam, cfg, workers=1)
    p, b = fw.proj, fw.binning
    W = int(cam.width)
    ys, xs = np.mgrid[0: cam.height, 0: cam.width]
    keys = []
    for t in range(b.tiles_x * b.tiles_y):
        s, e = b.tile_start[t], b.tile_end[t]
        if e == s:
            continue
        ty, tx = divmod(t, b.tiles_x)
        sl = (slice(ty * cfg.tile, (ty + 1) * cfg.tile), slice(tx * cfg.tile, (tx + 1) * cfg.tile))
        px, py = xs[sl].ravel(), ys[sl].ravel()
        g = b.pair_gauss[s:e]
        dx = px[:, None] - p.mean2d[g, 0]
        dy = py[:, None] - p.mean2d[g, 1]
        con = p.conic[g]
        power = -0.5 * (con[:, 0] * dx * dx + con[:, 2] * dy * dy) - con[:, 1] * dx * dy
        a = fw.opacity[g] * np.exp(np.minimum(power, 0.0))
        state = np.where(power > 0, 0, np.where(a < cfg.alpha_floor, 0, np.where(a > cfg.alpha_cap, 2, 1)))
        used = fw.n_used[py, px]
        state = np.where(np.arange(e - s)[None, :] < used[:, None], state, 3)
        keys.append(state.astype(np.int8).tobytes())
    return hash((tuple(keys), b.order.tobytes(), fw.n_used.tobytes()))


def rasterize_op(mu: Tensor, sigma: Tensor, color: Tensor, opacity: Tensor, cam: CameraModel,
                 cfg: RasterConfig = DEFAULT_CONFIG) -> Tensor:
    """Differentiable render on the tape; returns an (H, W, 4) RGB + alpha tensor."""
    mu, sigma, color, opacity = (ops.as_tensor(t) for t in (mu, sigma, color, opacity))
    dtype = mu.dtype
    fw = _forward(mu.data, sigma.data, color.data, opacity.data, cam, cfg)
    ops.note_branch(fw.binning.order, fw.binning.pair_gauss, fw.n_used, fw.proj.valid)
    out = np.concatenate([fw.out.image, fw.out.alpha[..., None]], axis=-1).astype(dtype)
    sigma64 = np.asarray(sigma.data, dtype=np.float64)

    def vjp(g):
        grads = _backward(fw, sigma64, cam, cfg, g[..., :3], g[..., 3])
        return tuple(x.astype(dtype) for x in grads)

    return ops.custom(out, (mu, sigma, color, opacity), vjp)

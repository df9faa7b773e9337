"""Multi-scale image features and pixel-aligned sampling."""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.sparse as sp

from ..diff import Tensor, ops

PYRAMID_LEVELS = 4
BLUR_SIGMA = 1.0


def _blur_matrix(n: int, sigma: float = BLUR_SIGMA) -> np.ndarray:
    """1-D Gaussian blur with replicated borders (rows sum to one)."""
    r = int(np.ceil(3 * sigma))
    taps = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    taps /= taps.sum()
    m = np.zeros((n, n))
    for i in range(n):
        for k, w in zip(range(-r, r + 1), taps):
            m[i, min(max(i + k, 0), n - 1)] += w
    return m


def _upsample_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Bilinear resampling with half-pixel alignment and clamped borders."""
    m = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        x = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        x0 = min(int(np.floor(x)), max(n_in - 2, 0))
        f = x - x0
        m[i, x0] += 1 - f
        if n_in > 1:
            m[i, x0 + 1] += f
    return m


@lru_cache(maxsize=32)
def pyramid_operators(n: int, levels: int = PYRAMID_LEVELS) -> np.ndarray:
    """Stacked (levels, n, n) 1-D operators: blur+decimate ``l`` times, then upsample back."""
    ops_ = [np.eye(n)]
    down = np.eye(n)
    size = n
    for _ in range(1, levels):
        step = _blur_matrix(size)[::2] if size > 1 else _blur_matrix(size)
        down = step @ down
        size = down.shape[0]
        ops_.append(_upsample_matrix(n, size) @ down)
    out = np.stack(ops_)
    out.setflags(write=False)
    return out


def image_pyramid(image) -> Tensor:
    """(H, W, 3) -> (H, W, 3 * levels) blur pyramid, finest level first."""
    image = ops.as_tensor(image)
    H, W, C = image.shape
    dt = image.dtype
    rows = pyramid_operators(H).astype(dt)  # (L, H, H)
    cols_t = np.ascontiguousarray(pyramid_operators(W).transpose(0, 2, 1)).astype(dt)  # (L, W, W)
    L = rows.shape[0]

    def apply(x, r, ct):
        # per level: r @ x @ ct on each channel, x is (H, W, C)
        t = (r @ x.reshape(x.shape[0], -1)).reshape(L, r.shape[1], x.shape[1], C)
        t = np.moveaxis(t, 3, 1)  # (L, C, H, W)
        return np.moveaxis(t @ ct[:, None], 1, 3)  # (L, H, W, C)

    lv = apply(image.data, rows, cols_t)
    out = np.ascontiguousarray(np.moveaxis(lv, 0, 2).reshape(H, W, L * C))

    def vjp(g):
        g = np.moveaxis(g.reshape(H, W, L, C), 2, 0)  # (L, H, W, C)
        t = np.moveaxis(g, 3, 1) @ cols_t.transpose(0, 2, 1)[:, None]  # (L, C, H, W)
        t = np.moveaxis(t, 1, 3)  # (L, H, W, C)
        back = rows.transpose(0, 2, 1) @ t.reshape(L, H, W * C)
        return (back.sum(axis=0).reshape(H, W, C),)

    return ops.custom(out, (image,), vjp)


def encode_images(images, params: dict, prefix: str = "enc") -> list[Tensor]:
    """Blur pyramid of each image followed by the learned per-pixel affine lift."""
    out = []
    for img in images:
        pyr = image_pyramid(img)
        out.append(ops.einsum("hwc,cd->hwd", pyr, params[f"{prefix}.W"]) + params[f"{prefix}.b"])
    return out


def sample_pixel_aligned(fm, uv) -> Tensor:
    """Bilinear lookup of an (H, W, C) map at (P, 2) pixel coordinates.

    Pixel centers sit at integer coordinates; points outside are clamped to
    the border, where the gradient with respect to ``uv`` vanishes.
    """
    fm, uv = ops.as_tensor(fm), ops.as_tensor(uv)
    H, W, C = fm.shape
    pts = uv.data.reshape(-1, 2)
    x = np.clip(pts[:, 0], 0.0, W - 1)
    y = np.clip(pts[:, 1], 0.0, H - 1)
    x0 = np.minimum(np.floor(x), max(W - 2, 0)).astype(np.int64)
    y0 = np.minimum(np.floor(y), max(H - 2, 0)).astype(np.int64)
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    ops.note_branch(x0, y0, pts[:, 0] >= 0, pts[:, 0] <= W - 1, pts[:, 1] >= 0, pts[:, 1] <= H - 1)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    f = fm.data.reshape(H * W, C)
    wx0, wy0 = 1 - fx[:, 0], 1 - fy[:, 0]
    wx1, wy1 = fx[:, 0], fy[:, 0]
    P = len(x0)
    corners = [y0 * W + x0, y0 * W + x1, y1 * W + x0, y1 * W + x1]
    S = sp.csr_matrix((np.concatenate([wx0 * wy0, wx1 * wy0, wx0 * wy1, wx1 * wy1]).astype(fm.dtype),
                       (np.tile(np.arange(P), 4), np.concatenate(corners))), shape=(P, H * W))
    out = np.asarray(S @ f).astype(fm.dtype)
    inside_x = (pts[:, 0] >= 0) & (pts[:, 0] <= W - 1)
    inside_y = (pts[:, 1] >= 0) & (pts[:, 1] <= H - 1)

    def vjp(g):
        g = g.reshape(P, C)
        g_fm = np.asarray(S.T @ g).reshape(H, W, C) if fm.requires_grad else None
        g_uv = None
        if uv.requires_grad:
            f00, f01, f10, f11 = (f[c] for c in corners)
            dx = ((f01 - f00) * wy0[:, None] + (f11 - f10) * wy1[:, None]) * g
            dy = ((f10 - f00) * wx0[:, None] + (f11 - f01) * wx1[:, None]) * g
            g_uv = np.stack([dx.sum(1) * inside_x, dy.sum(1) * inside_y], axis=1)
            g_uv = g_uv.reshape(uv.shape).astype(uv.dtype)
        return g_fm, g_uv

    return ops.custom(out.reshape(uv.shape[:-1] + (C,)), (fm, uv), vjp)

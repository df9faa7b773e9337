"""Image-space training losses and quality metrics."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..diff import Tensor, ops
from ..geometry import TriMesh, laplacian_vectors

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03
PSNR_SENTINEL = 99.99


@dataclass(frozen=True)
class LossWeights:
    lambda_per: float = 1.0
    lambda_mask: float = 5.0
    lambda_lap: float = 100.0

    def __post_init__(self):
        for name in ("lambda_per", "lambda_mask", "lambda_lap"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


@lru_cache(maxsize=16)
def window_matrix(n: int, size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    """``(n, n)`` matrix of a "same"-size 1-D correlation with zero padding."""
    taps = gaussian_taps(size, sigma)
    r = size // 2
    m = np.zeros((n, n))
    for i in range(n):
        for k in range(size):
            j = i + k - r
            if 0 <= j < n:
                m[i, j] = taps[k]
    m.setflags(write=False)
    return m


def _check_pair(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def ssim_map(a, b):
    """Per-pixel, per-channel SSIM of (H, W, C) images; tape-aware."""
    _check_pair(a, b)
    tensor_in = isinstance(a, Tensor) or isinstance(b, Tensor)
    a, b = ops.as_tensor(a), ops.as_tensor(b)
    if a.ndim == 2:
        a, b = a.reshape(*a.shape, 1), b.reshape(*b.shape, 1)
    H, W = a.shape[:2]
    dt = np.result_type(a.dtype, b.dtype)
    gh, gw = window_matrix(H).astype(dt), window_matrix(W).astype(dt)

    def blur(x):
        return ops.einsum("ij,jkc,lk->ilc", gh, x, gw)

    mu_a, mu_b = blur(a), blur(b)
    saa = blur(a * a) - mu_a * mu_a
    sbb = blur(b * b) - mu_b * mu_b
    sab = blur(a * b) - mu_a * mu_b
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * sab + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (saa + sbb + c2)
    out = num / den
    return out if tensor_in else out.data


def ssim(a, b):
    """Mean SSIM (11x11 Gaussian window, sigma 1.5), averaged over channels."""
    m = ssim_map(a, b)
    return m.mean() if isinstance(m, Tensor) else float(m.mean())


def psnr(a, b) -> float:
    """PSNR in dB for images in [0, 1]; identical inputs give the 99.99 sentinel."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    _check_pair(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_SENTINEL
    return min(10.0 * np.log10(1.0 / mse), PSNR_SENTINEL)


def mask_iou(pred, gt, threshold: float = 0.5) -> float:
    pred, gt = np.asarray(pred) > threshold, np.asarray(gt) > threshold
    _check_pair(pred, gt)
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def l1(a, b):
    _check_pair(a, b)
    return ops.absolute(ops.as_tensor(a) - b).mean()


def laplacian_energy(mesh: TriMesh, positions, L=None, reference=None):
    """Mean squared norm of the umbrella vectors of ``positions`` on ``mesh``.

    With ``reference`` the umbrella vectors of the displacement
    ``positions - reference`` are used, so only non-smooth deformation of
    the reference shape is penalized.
    """
    if reference is not None:
        dtype = positions.dtype if isinstance(positions, Tensor) else np.float64
        positions = positions - np.asarray(reference, dtype=dtype)
    lap = laplacian_vectors(mesh, positions, L)
    if isinstance(lap, Tensor):
        return (lap * lap).sum(axis=1).mean()
    return float((lap ** 2).sum(axis=1).mean())


def loss_terms(pred_image, pred_mask, gt_image, gt_mask, low_mesh: TriMesh, low_positions,
               w: LossWeights, L=None, lap_reference=None) -> dict:
    """Individual weighted-loss ingredients (unweighted values)."""
    _check_pair(pred_image, gt_image)
    _check_pair(pred_mask, gt_mask)
    return {
        "l1": l1(pred_image, gt_image),
        "ssim": ssim(pred_image, gt_image),
        "mask": l1(pred_mask, gt_mask),
        "lap": laplacian_energy(low_mesh, low_positions, L, lap_reference),
    }


def loss_total(pred_image, pred_mask, gt_image, gt_mask, low_mesh: TriMesh, low_positions,
               w: LossWeights = LossWeights(), L=None, lap_reference=None):
    """L1 + lambda_per (1 - SSIM) + lambda_mask L1(mask) + lambda_lap Laplacian energy."""
    t = loss_terms(pred_image, pred_mask, gt_image, gt_mask, low_mesh, low_positions, w, L, lap_reference)
    return t["l1"] + (1.0 - t["ssim"]) * w.lambda_per + t["mask"] * w.lambda_mask + t["lap"] * w.lambda_lap


class TermCounter:
    """Collects per-(view, step) loss terms and reduces them in a fixed order."""

    def __init__(self):
        self.terms: list[tuple[tuple, Tensor]] = []

    def add(self, key: tuple, value):
        if any(k == key for k, _ in self.terms):
            raise ValueError(f"duplicate loss term {key}")
        self.terms.append((key, value))

    def __len__(self):
        return len(self.terms)

    def mean(self):
        if not self.terms:
            raise ValueError("no loss terms collected")
        ordered = [v for _, v in sorted(self.terms, key=lambda kv: kv[0])]
        total = ordered[0]
        for v in ordered[1:]:
            total = total + v
        return total * (1.0 / len(ordered))


def ssim_reference(a, b) -> float:
    """Scalar-loop SSIM used to cross-check :func:`ssim`."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    H, W, C = a.shape
    taps = gaussian_taps()
    r = SSIM_WINDOW // 2
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    total = 0.0
    for ch in range(C):
        for i in range(H):
            for j in range(W):
                ma = mb = saa = sbb = sab = 0.0
                for di in range(-r, r + 1):
                    ii = i + di
                    if ii < 0 or ii >= H:
                        continue
                    for dj in range(-r, r + 1):
                        jj = j + dj
                        if jj < 0 or jj >= W:
                            continue
                        w = taps[di + r] * taps[dj + r]
                        x, y = a[ii, jj, ch], b[ii, jj, ch]
                        ma += w * x
                        mb += w * y
                        saa += w * x * x
                        sbb += w * y * y
                        sab += w * x * y
                saa -= ma * ma
                sbb -= mb * mb
                sab -= ma * mb
                total += ((2 * ma * mb + c1) * (2 * sab + c2)) / ((ma * ma + mb * mb + c1) * (saa + sbb + c2))
    return total / (H * W * C)

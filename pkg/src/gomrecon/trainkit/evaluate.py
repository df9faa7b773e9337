"""Held-out evaluation over feedback steps, subdivision levels and pose noise."""

from __future__ import annotations

import csv
import time
from dataclasses import astuple, dataclass, fields
from pathlib import Path

import numpy as np

from ..diff import ParamStore
from ..gom import CanonicalGoM, articulate, gaussians_world
from ..reconstruct import SourceSet, reconstruct
from ..rig import Pose, perturb_pose
from ..splat import DEFAULT_CONFIG, CameraModel, RasterConfig, rasterize
from .losses import mask_iou, psnr, ssim
from .scenes import Scene, sample_scene

HELD_OUT_BASE = 10_000  # evaluation subject seeds start here, far from any training range


@dataclass(frozen=True)
class MetricsRow:
    subject: int
    T: int
    k: int
    sigma: float
    psnr: float
    ssim: float
    iou: float
    recon_ms: float
    render_ms: float

    def __post_init__(self):
        if not (self.psnr >= 0):
            raise ValueError(f"PSNR must be >= 0, got {self.psnr}")
        if not (-1.0 - 1e-9 <= self.ssim <= 1.0 + 1e-9):
            raise ValueError(f"SSIM must lie in [-1, 1], got {self.ssim}")


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 1
    n_subjects: int = 8
    resolution: int = 64
    n_sources: int = 3
    T: tuple = (1, 2, 3)
    k: tuple = (0, 1, 2)
    sigma: tuple = (0.0, 0.1, 0.3)
    pose_scale: float = 1.0
    vertex_bound: float = 0.05

    def __post_init__(self):
        if self.n_subjects < 1 or self.resolution < 1 or self.n_sources < 1:
            raise ValueError("n_subjects, resolution and n_sources must be >= 1")
        if not self.T or min(self.T) < 1:
            raise ValueError(f"T values must be >= 1, got {self.T}")
        if any(k not in (0, 1, 2, 3) for k in self.k):
            raise ValueError(f"k values must lie in 0..3, got {self.k}")
        if any(s < 0 for s in self.sigma):
            raise ValueError(f"sigma values must be >= 0, got {self.sigma}")

    def scenes(self) -> list[Scene]:
        out = []
        for i in range(self.n_subjects):
            rng = np.random.default_rng([self.seed, i, 0xE7A1])
            out.append(sample_scene(HELD_OUT_BASE + i, rng, self.n_sources, 1, self.resolution, self.pose_scale))
        return out


def render_gom(gom: CanonicalGoM, pose: Pose, cam: CameraModel, cfg: RasterConfig = DEFAULT_CONFIG,
               workers=None):
    """Inference render of a canonical GoM in ``pose``; returns ``(image, alpha)``."""
    out = rasterize(gaussians_world(articulate(gom, pose)), cam, cfg, workers)
    return out.image, out.alpha


def score(pred_image, pred_mask, gt_image, gt_mask) -> tuple[float, float, float]:
    pred_image = np.clip(pred_image, 0.0, 1.0)
    return psnr(pred_image, gt_image), float(ssim(pred_image, gt_image)), mask_iou(pred_mask, gt_mask)


def noisy_sources(scene: Scene, sigma: float, seed: int) -> SourceSet:
    """Source set whose poses (not images) carry Gaussian noise of std ``sigma``."""
    src = scene.source_set()
    poses = [perturb_pose(p, sigma, seed * 1000 + n) for n, p in enumerate(src.poses)]
    return SourceSet(src.images, src.masks, poses, src.cameras)


def evaluate(store: ParamStore, cfg: EvalConfig = EvalConfig(), scenes: list | None = None,
             raster: RasterConfig = DEFAULT_CONFIG) -> list[MetricsRow]:
    """Score every (subject, T, k, sigma) cell on held-out target views and poses.

    One reconstruction per (subject, k, sigma) runs to ``max(T)``; the
    intermediate states are exactly the outputs of shorter runs.
    """
    scenes = cfg.scenes() if scenes is None else scenes
    t_max = max(cfg.T)
    rows = []
    for i, scene in enumerate(scenes):
        tgt = scene.targets[0]
        for k in cfg.k:
            for s_i, sigma in enumerate(cfg.sigma):
                sources = noisy_sources(scene, sigma, cfg.seed * 7919 + i * 31 + s_i)
                res = reconstruct(sources, scene.rig, t_max, store, k, cfg.vertex_bound, raster,
                                  keep_states=True)
                for T in cfg.T:
                    gom = res.states[T].gom
                    t0 = time.perf_counter()
                    image, alpha = render_gom(gom, tgt.pose, tgt.camera, raster)
                    render_ms = 1e3 * (time.perf_counter() - t0)
                    p, q, u = score(image, alpha, tgt.image, tgt.mask)
                    rows.append(MetricsRow(scene.subject_id, T, k, float(sigma), p, q, u,
                                           float(sum(res.step_ms[:T])), render_ms))
    return rows


def write_metrics(rows, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f.name for f in fields(MetricsRow)])
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in astuple(r)])


def read_metrics(path) -> list[MetricsRow]:
    with open(Path(path), newline="") as fh:
        rd = csv.DictReader(fh)
        return [MetricsRow(int(r["subject"]), int(r["T"]), int(r["k"]), float(r["sigma"]), float(r["psnr"]),
                           float(r["ssim"]), float(r["iou"]), float(r["recon_ms"]), float(r["render_ms"]))
                for r in rd]


def mean_metric(rows, metric: str, **where) -> float:
    sel = [getattr(r, metric) for r in rows if all(getattr(r, k) == v for k, v in where.items())]
    if not sel:
        raise ValueError(f"no rows match {where}")
    return float(np.mean(sel))


def self_check_rows(scene: Scene) -> list[MetricsRow]:
    """Reference renders scored against themselves (every PSNR is the sentinel)."""
    rows = []
    for v in scene.sources + scene.targets:
        p, q, u = score(v.image, v.mask, v.image, v.mask)
        rows.append(MetricsRow(scene.subject_id, 0, -1, 0.0, p, q, u, 0.0, 0.0))
    return rows

"""Training loop: full backpropagation through every feedback step."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..diff import ParamStore, adam_step
from ..geometry import umbrella_operator
from ..gom import init_canonical
from ..reconstruct import (ModelConfig, StepContext, encode_images, feedback_step, init_params, initial_state,
                           render_sources, render_state)
from ..splat import RasterConfig
from .losses import LossWeights, TermCounter, loss_total, psnr
from .scenes import Scene, sample_scene


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    iterations: int = 2000
    n_subjects: int = 32
    resolution: int = 64
    n_sources: int = 3
    T: int = 3
    k: int = 2
    lr: float = 1e-3
    lr_encoder: float = 2e-3
    grad_clip: float = 1.0
    lambda_per: float = 1.0
    lambda_mask: float = 5.0
    lambda_lap: float = 100.0
    pose_scale: float = 1.0
    width: int = 32
    hidden: int = 64
    vertex_bound: float = 0.05
    lap_relative: bool = True  # Laplacian of the displacement from the template
    tile: int = 8
    log_every: int = 1
    grid_every: int = 0  # 0 disables PNG sample grids
    checkpoint_every: int = 0  # 0 writes only the final checkpoint

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError(f"config field iterations must be >= 0, got {self.iterations}")
        positive = ("n_subjects", "resolution", "n_sources", "T", "width", "hidden", "tile",
                    "log_every")
        for name in positive:
            if int(getattr(self, name)) < 1:
                raise ValueError(f"config field {name} must be >= 1, got {getattr(self, name)}")
        if self.k not in (0, 1, 2, 3):
            raise ValueError(f"config field k must be in 0..3, got {self.k}")
        for name in ("lr", "lr_encoder", "grad_clip", "pose_scale", "vertex_bound", "grid_every",
                     "checkpoint_every"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"config field {name} must be finite and >= 0, got {v}")
        LossWeights(self.lambda_per, self.lambda_mask, self.lambda_lap)

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.lambda_per, self.lambda_mask, self.lambda_lap)

    @property
    def raster(self) -> RasterConfig:
        return RasterConfig(tile=self.tile)

    def model_config(self, n_vertices: int) -> ModelConfig:
        return ModelConfig(n_vertices, self.n_sources, self.width, self.hidden, self.vertex_bound, self.seed)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown config fields {unknown}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> TrainConfig:
        try:
            d = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ValueError(f"{path}: cannot read config ({exc.strerror})") from None
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: config is not valid JSON ({exc})") from None
        try:
            return cls.from_json(d)
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}: {exc}") from None

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


def training_scene(cfg: TrainConfig, iteration: int) -> Scene:
    rng = np.random.default_rng([cfg.seed, iteration, 0x7A1])
    subject = int(rng.integers(cfg.n_subjects))
    return sample_scene(subject, rng, cfg.n_sources, 1, cfg.resolution, cfg.pose_scale)


@dataclass
class StepReport:
    loss: float
    terms: int
    psnr_target: list  # per feedback step
    grad_norm: float


def scene_loss(scene: Scene, params: dict, cfg: TrainConfig, L=None):
    """Mean loss over every source and target view at every feedback step."""
    sources = scene.source_set()
    template = init_canonical(scene.rig, cfg.k)
    mesh = template.low_mesh
    L = umbrella_operator(mesh) if L is None else L
    ref = template.low_vertices if cfg.lap_relative else None
    raster = cfg.raster
    state = initial_state(template, params)
    ctx = StepContext(encode_images(sources.images, params))
    ctx.renders = render_sources(state, sources, raster)
    counter = TermCounter()
    n = len(sources)
    target_psnr = []
    for t in range(1, cfg.T + 1):
        state = feedback_step(state, sources, params, cfg.vertex_bound, ctx)
        renders = render_sources(state, sources, raster)
        for i, (r, view) in enumerate(zip(renders, scene.sources)):
            counter.add((t, i), loss_total(r[..., :3], r[..., 3], view.image, view.mask, mesh, state.low,
                                           cfg.weights, L, ref))
        for j, view in enumerate(scene.targets):
            r = render_state(state.low, state.enc, template, view.pose, view.camera, raster)
            counter.add((t, n + j), loss_total(r[..., :3], r[..., 3], view.image, view.mask, mesh, state.low,
                                               cfg.weights, L, ref))
            target_psnr.append(psnr(np.clip(r.data[..., :3], 0, 1), view.image))
        ctx.renders = renders
    expected = (n + len(scene.targets)) * cfg.T
    if len(counter) != expected:
        raise AssertionError(f"loss covers {len(counter)} terms, expected {expected}")
    return counter.mean(), len(counter), target_psnr


def _clip(grads: dict, limit: float) -> float:
    norm = float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads.values())))
    if limit > 0 and norm > limit:
        s = limit / norm
        for k in grads:
            grads[k] = grads[k] * s
    return norm


def train_step(store: ParamStore, cfg: TrainConfig, iteration: int) -> StepReport:
    scene = training_scene(cfg, iteration)
    params = store.tensors()
    loss, terms, tpsnr = scene_loss(scene, params, cfg)
    loss.backward()
    grads = {k: t.grad for k, t in params.items() if t.grad is not None}
    bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise FloatingPointError(f"non-finite gradients in {bad} at iteration {iteration}")
    norm = _clip(grads, cfg.grad_clip)
    adam_step(store, grads, lambda name: cfg.lr_encoder if name.startswith("enc.") else cfg.lr)
    return StepReport(float(loss.data), terms, tpsnr, norm)


def new_model(cfg: TrainConfig) -> tuple[ModelConfig, ParamStore]:
    template = init_canonical(training_scene(cfg, 0).rig, cfg.k)
    mcfg = cfg.model_config(template.low_mesh.n_vertices)
    return mcfg, init_params(mcfg)


CSV_FIELDS = ["iteration", "loss", "terms", "grad_norm", "target_psnr_t1", "target_psnr_tT", "ms"]


def train(cfg: TrainConfig, out_dir=None, store: ParamStore | None = None, start: int = 0,
          progress=None) -> tuple[ModelConfig, ParamStore, list]:
    """Run ``cfg.iterations`` Adam steps; writes ``train_log.csv`` and checkpoints into ``out_dir``."""
    from ..io import save_checkpoint

    mcfg, fresh = new_model(cfg)
    store = fresh if store is None else store
    out = Path(out_dir) if out_dir is not None else None
    log = []
    writer = fh = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "train_log.csv", "a" if start else "w", newline="")
        writer = csv.writer(fh)
        if not start:
            writer.writerow(CSV_FIELDS)
    try:
        for it in range(start, cfg.iterations):
            t0 = time.perf_counter()
            rep = train_step(store, cfg, it)
            ms = 1e3 * (time.perf_counter() - t0)
            row = [it, rep.loss, rep.terms, rep.grad_norm, rep.psnr_target[0], rep.psnr_target[-1], ms]
            log.append(row)
            if writer is not None and (it % cfg.log_every == 0 or it == cfg.iterations - 1):
                writer.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in row])
                fh.flush()
            if out is not None and cfg.grid_every and (it + 1) % cfg.grid_every == 0:
                write_sample_grid(store, cfg, it, out / f"grid_{it + 1:06d}.png")
            if out is not None and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / "checkpoint.lgom", store, checkpoint_meta(mcfg, cfg, it + 1))
            if progress is not None:
                progress(row)
    finally:
        if fh is not None:
            fh.close()
    if out is not None:
        save_checkpoint(out / "checkpoint.lgom", store, checkpoint_meta(mcfg, cfg, cfg.iterations))
    return mcfg, store, log


def checkpoint_meta(mcfg: ModelConfig, cfg: TrainConfig | None, iteration: int) -> dict:
    return {"model": mcfg.to_json(), "train": None if cfg is None else cfg.to_json(), "iteration": iteration}


def write_sample_grid(store: ParamStore, cfg: TrainConfig, iteration: int, path) -> None:
    """Row per feedback step: target ground truth next to the render of GoM_t."""
    from ..io import write_png
    from ..reconstruct import reconstruct

    scene = training_scene(cfg, iteration)
    res = reconstruct(scene.source_set(), scene.rig, cfg.T, store, cfg.k, cfg.vertex_bound,
                      cfg.raster, keep_states=True)
    tgt = scene.targets[0]
    rows = []
    for st in res.states:
        r = render_state(st.low, st.enc, st.template, tgt.pose, tgt.camera, cfg.raster).data[..., :3]
        rows.append(np.concatenate([tgt.image, np.clip(r, 0, 1)], axis=1))
    write_png(path, np.concatenate(rows, axis=0))

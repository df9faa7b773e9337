"""Iterative feedback reconstruction of a canonical Gaussians-on-Mesh avatar."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..diff import MLPSpec, ParamStore, Tensor, init_mlp, kaiming_uniform, mlp, name_rng, ops
from ..geometry import face_frames, neighbor_table, prolong
from ..gom import (CanonicalGoM, FaceGaussians, decode, default_encoding, init_canonical,
                   world_from_decoded)
from ..rig import Pose, Rig, skin
from ..splat import DEFAULT_CONFIG, CameraModel, RasterConfig, rasterize_op
from .attention import fuse_multi_source, mesh_aggregate
from .encoder import PYRAMID_LEVELS, encode_images, sample_pixel_aligned

POS_SCALE = 10.0  # neighbour offsets enter the attention in decimetres


@dataclass(frozen=True)
class ModelConfig:
    n_vertices: int
    n_sources: int = 3
    width: int = 32
    hidden: int = 64
    vertex_bound: float = 0.05
    seed: int = 0

    def __post_init__(self):
        for name in ("n_vertices", "n_sources", "width", "hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"model config field {name} must be >= 1")
        if not self.vertex_bound > 0:
            raise ValueError("vertex_bound must be positive")

    @property
    def vertex_head(self) -> MLPSpec:
        return MLPSpec((self.width, self.hidden, self.hidden, 3))

    @property
    def gaussian_head(self) -> MLPSpec:
        return MLPSpec((3 * self.width + self.n_sources * self.width, self.hidden, self.hidden, 13))

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> ModelConfig:
        return cls(**d)


def init_params(cfg: ModelConfig, dtype=np.float32) -> ParamStore:
    """Fresh network parameters; both update heads start at exactly zero."""
    C, s = cfg.width, cfg.seed
    store = ParamStore()

    def dense(name, fan_in, shape):
        store.add(name, kaiming_uniform(s, name, fan_in, shape, dtype=dtype))

    def zeros(name, shape):
        store.add(name, np.zeros(shape, dtype))

    dense("enc.W", 3 * PYRAMID_LEVELS, (3 * PYRAMID_LEVELS, C))
    zeros("enc.b", C)
    dense("lift.W", 2 * C, (2 * C, C))
    zeros("lift.b", C)
    for r in ("1", "2"):
        for m in ("q", "k", "v"):
            dense(f"fuse.{m}{r}", C, (C, C))
        zeros(f"fuse.vb{r}", C)
    for r in range(2):
        for m in ("q", "k", "v", "out"):
            dense(f"mesh{r}.{m}", C, (C, C))
        dense(f"mesh{r}.pos", 3, (3, C))
    store.update(init_mlp(cfg.vertex_head, "vhead", s, dtype))
    store.update(init_mlp(cfg.gaussian_head, "ghead", s, dtype))
    store.add("embed", name_rng(s, "embed").normal(0.0, 1.0, (cfg.n_vertices, C)).astype(dtype))
    zeros("embed_upd.W", (C, C))
    zeros("embed_upd.b", C)
    return store


@dataclass(frozen=True)
class SourceSet:
    images: list
    masks: list
    poses: list
    cameras: list

    def __post_init__(self):
        n = len(self.images)
        if n < 1:
            raise ValueError("a source set needs at least one view")
        if not (len(self.masks) == len(self.poses) == len(self.cameras) == n):
            raise ValueError("images, masks, poses and cameras must have equal length")
        shape = np.shape(self.images[0])
        for i, (img, m, cam) in enumerate(zip(self.images, self.masks, self.cameras)):
            if np.shape(img) != shape:
                raise ValueError(f"source {i} image shape {np.shape(img)} differs from {shape}")
            if np.shape(m) != shape[:2]:
                raise ValueError(f"source {i} mask shape {np.shape(m)} does not match its image")
            if (cam.height, cam.width) != shape[:2]:
                raise ValueError(f"source {i} camera is {cam.width}x{cam.height}, image is {shape[1]}x{shape[0]}")

    def __len__(self):
        return len(self.images)


@dataclass(frozen=True)
class FeedbackState:
    """GoM_t plus the per-vertex embeddings carried between steps.

    Geometry and Gaussians are stored relative to the template: ``offset`` is
    the low-res vertex displacement and ``head`` the encodings minus their
    defaults. Both are exactly zero at initialization, so the float64 view
    reproduces the template bit for bit whatever dtype the network runs in.
    """

    template: CanonicalGoM
    offset: Tensor  # (V, 3)
    head: Tensor  # (F, 13)
    embeddings: Tensor  # (V, C)
    t: int = 0

    @property
    def low(self) -> Tensor:
        return self.offset + self.template.low_vertices.astype(self.offset.dtype)

    @property
    def enc(self) -> Tensor:
        return self.head + default_encoding().astype(self.head.dtype)

    @property
    def gom(self) -> CanonicalGoM:
        low = self.template.low_vertices + np.asarray(self.offset.data, dtype=np.float64)
        enc = default_encoding() + np.asarray(self.head.data, dtype=np.float64)
        return self.template.with_low_vertices(low).with_gaussians(FaceGaussians.from_packed(enc))

    def high(self) -> Tensor:
        return prolong(self.template.prolongation, self.low)


@dataclass
class StepContext:
    """Per-reconstruction caches: encoded sources and renders of the latest state."""

    src_features: list
    renders: list | None = None
    render_features: list | None = None
    timings_ms: list = field(default_factory=list)


def initial_state(template: CanonicalGoM, params: dict, dtype=None) -> FeedbackState:
    emb = params["embed"]
    if emb.shape[0] != template.low_mesh.n_vertices:
        raise ValueError(f"model expects {emb.shape[0]} low-res vertices, template has "
                         f"{template.low_mesh.n_vertices}")
    dtype = emb.dtype if dtype is None else dtype
    V, F = template.low_mesh.n_vertices, len(template.high_faces)
    head = template.gaussians.packed() - default_encoding()
    return FeedbackState(template, Tensor(np.zeros((V, 3), dtype)), Tensor(head.astype(dtype)), emb, 0)


def project_tensor(points: Tensor, cam: CameraModel, min_depth: float = 1e-3) -> Tensor:
    dt = points.dtype
    m = ops.einsum("vj,ij->vi", points, cam.R.astype(dt)) + cam.t.astype(dt)
    z = ops.clip(m[:, 2:3], min_depth, np.inf)
    f = np.array([cam.fx, cam.fy], dtype=dt)
    c = np.array([cam.cx, cam.cy], dtype=dt)
    return m[:, 0:2] / z * f + c


def gaussian_means(high_vertices: Tensor, faces: np.ndarray, enc: Tensor) -> Tensor:
    tri = ops.take(high_vertices, faces, axis=0)
    v1, v2, v3 = tri[:, 0], tri[:, 1], tri[:, 2]
    A = face_frames(v1, v2, v3)
    offset = decode(enc)["offset"]
    return (v1 + v2 + v3) * (1.0 / 3.0) + ops.einsum("fij,fj->fi", A, offset)


def render_state(low: Tensor, enc: Tensor, template: CanonicalGoM, pose: Pose, cam: CameraModel,
                 cfg: RasterConfig = DEFAULT_CONFIG) -> Tensor:
    """Differentiable (H, W, 4) render of a canonical state in the given pose."""
    posed_low = skin(low, template.weights_idx, template.weights_val, pose)
    high = prolong(template.prolongation, posed_low)
    mu, sigma, color, opacity = world_from_decoded(high, template.high_faces, decode(enc))
    return rasterize_op(mu, sigma, color, opacity, cam, cfg)


def render_sources(state: FeedbackState, sources: SourceSet, cfg: RasterConfig = DEFAULT_CONFIG) -> list:
    return [render_state(state.low, state.enc, state.template, p, c, cfg)
            for p, c in zip(sources.poses, sources.cameras)]


def compute_feedback_features(state: FeedbackState, sources: SourceSet, params: dict,
                              ctx: StepContext | None = None) -> Tensor:
    """Per-vertex feedback features comparing the sources with renders of ``state``."""
    if ctx is None:
        ctx = StepContext(encode_images(sources.images, params))
    if ctx.renders is None:
        ctx.renders = render_sources(state, sources)
    ctx.render_features = encode_images([r[..., :3] for r in ctx.renders], params)
    per_source = []
    for n, (pose, cam) in enumerate(zip(sources.poses, sources.cameras)):
        posed = skin(state.low, state.template.weights_idx, state.template.weights_val, pose)
        per_source.append(compare_at(ctx, n, project_tensor(posed, cam), params))
    fused = fuse_multi_source(ops.stack(per_source, axis=1), state.embeddings, params)
    nbr, mask = neighbor_table(state.template.low_mesh)
    return mesh_aggregate(fused, state.low * POS_SCALE, nbr, mask, params)


def compare_at(ctx: StepContext, n: int, uv: Tensor, params: dict) -> Tensor:
    """Lifted (source, render) feature pair of source ``n`` sampled at pixels ``uv``."""
    f_src = sample_pixel_aligned(ctx.src_features[n], uv)
    f_pred = sample_pixel_aligned(ctx.render_features[n], uv)
    both = ops.concat([f_src, f_pred], axis=-1)
    return ops.leaky_relu(ops.einsum("vc,cd->vd", both, params["lift.W"]) + params["lift.b"])


def vertex_residual(feedback: Tensor, params: dict, bound: float = 0.05) -> Tensor:
    """Per-vertex displacement ``bound * tanh(mlp(feedback) / bound)``."""
    spec = MLPSpec(_widths(params, "vhead"))
    if spec.widths[0] != feedback.shape[1]:
        raise ValueError(f"vertex head expects width {spec.widths[0]}, got {feedback.shape[1]}")
    delta = mlp(spec, "vhead", params, feedback)
    return ops.tanh(delta * (1.0 / bound)) * bound


def update_vertices(state: FeedbackState, feedback: Tensor, params: dict, bound: float = 0.05) -> Tensor:
    """Residual low-res vertex update, each coordinate limited to ``bound`` per step."""
    V = state.offset.shape[0]
    if feedback.shape[0] != V:
        raise ValueError(f"{feedback.shape[0]} feedback rows for {V} vertices")
    return state.low + vertex_residual(feedback, params, bound)


def _widths(params: dict, prefix: str) -> tuple[int, ...]:
    ws, i = [], 0
    while f"{prefix}.W{i}" in params:
        W = params[f"{prefix}.W{i}"]
        if i == 0:
            ws.append(W.shape[0])
        ws.append(W.shape[1])
        i += 1
    return tuple(ws)


def gaussian_head(state: FeedbackState, new_low: Tensor, feedback: Tensor, sources: SourceSet,
                  params: dict, ctx: StepContext | None = None) -> Tensor:
    """Per-face head output; the new encodings are this plus the defaults.

    Face features are the three corner features of the prolonged feedback,
    followed by, per source in order, the lifted comparison of source and
    render features where the current Gaussians (current encodings on the
    refined mesh) project. The comparison tells each face how far the last
    render is from the source at its own location.
    """
    tpl = state.template
    if ctx is None:
        ctx = StepContext(encode_images(sources.images, params))
    if ctx.render_features is None:
        if ctx.renders is None:
            ctx.renders = render_sources(state, sources)
        ctx.render_features = encode_images([r[..., :3] for r in ctx.renders], params)
    widths = _widths(params, "ghead")
    C = feedback.shape[1]
    if widths[0] != 3 * C + len(sources) * C:
        raise ValueError(f"Gaussian head expects {widths[0]} inputs, got {3 * C} face + "
                         f"{len(sources)}x{C} source features")
    vert_feat = prolong(tpl.prolongation, feedback)
    corners = ops.take(vert_feat, tpl.high_faces, axis=0).reshape(len(tpl.high_faces), 3 * C)
    parts = [corners]
    for n, (pose, cam) in enumerate(zip(sources.poses, sources.cameras)):
        posed = prolong(tpl.prolongation, skin(new_low, tpl.weights_idx, tpl.weights_val, pose))
        mu = gaussian_means(posed, tpl.high_faces, state.enc)
        parts.append(compare_at(ctx, n, project_tensor(mu, cam), params))
    return mlp(MLPSpec(widths), "ghead", params, ops.concat(parts, axis=-1))


def update_gaussians(state: FeedbackState, new_low: Tensor, feedback: Tensor, sources: SourceSet,
                     params: dict, ctx: StepContext | None = None) -> Tensor:
    """Absolute (not residual) per-face Gaussian encodings for the refined mesh."""
    out = gaussian_head(state, new_low, feedback, sources, params, ctx)
    return out + default_encoding().astype(out.dtype)


def feedback_step(state: FeedbackState, sources: SourceSet, params: dict, bound: float = 0.05,
                  ctx: StepContext | None = None) -> FeedbackState:
    if ctx is None:
        ctx = StepContext(encode_images(sources.images, params))
    feedback = compute_feedback_features(state, sources, params, ctx)
    offset = state.offset + vertex_residual(feedback, params, bound)
    new_low = offset + state.template.low_vertices.astype(offset.dtype)
    head = gaussian_head(state, new_low, feedback, sources, params, ctx)
    emb = state.embeddings + ops.einsum("vc,cd->vd", feedback, params["embed_upd.W"]) + params["embed_upd.b"]
    ctx.renders = ctx.render_features = None
    return FeedbackState(state.template, offset, head, emb, state.t + 1)


@dataclass
class ReconstructResult:
    gom: CanonicalGoM
    states: list
    step_ms: list


def reconstruct(sources: SourceSet, rig: Rig, T: int, params, k: int = 2, bound: float = 0.05,
                cfg: RasterConfig = DEFAULT_CONFIG, keep_states: bool = False) -> ReconstructResult:
    """Run ``T`` feedback steps from the rig template and return GoM_T.

    ``params`` may be a ``ParamStore`` (inference, no tape) or a dict of
    tensors (gradients flow through every step).
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if isinstance(params, ParamStore):
        params = {name: Tensor(v) for name, v in params.params.items()}
    template = init_canonical(rig, k)
    state = initial_state(template, params)
    ctx = StepContext(encode_images(sources.images, params))
    states, times = [state], []
    for _ in range(T):
        t0 = time.perf_counter()
        ctx.renders = render_sources(state, sources, cfg)
        state = feedback_step(state, sources, params, bound, ctx)
        times.append(1e3 * (time.perf_counter() - t0))
        if keep_states:
            states.append(state)
    return ReconstructResult(state.gom, states if keep_states else [state], times)

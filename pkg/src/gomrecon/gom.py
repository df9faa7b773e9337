"""Coupled multi-resolution Gaussians-on-Mesh.

A low-resolution mesh carries the skinning weights and is the only thing
ever skinned; the Gaussian-bearing high-resolution mesh is always obtained
by prolongation of the low-resolution vertices.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .diff import Tensor, ops
from .geometry import Prolongation, TriMesh, face_frames, prolong, subdivide_levels, validate_mesh
from .rig import Pose, Rig, skin

SCALE_MIN = 1e-4
SCALE_MAX = 10.0
OFFSET_BOUND = 2.0
DEFAULT_SCALE = 0.5
DEFAULT_OPACITY = 0.95
ENCODING_WIDTH = 13  # r(3) s(3) c(3) o(3) alpha(1)


@dataclass(frozen=True)
class FaceGaussians:
    """Stored (encoded) per-face Gaussian parameters, one row per high-res face."""

    r: np.ndarray  # (F, 3) axis-angle, radians
    s: np.ndarray  # (F, 3) log-scale, local units
    c: np.ndarray  # (F, 3) color logits
    o: np.ndarray  # (F, 3) offset pre-activation
    alpha: np.ndarray  # (F,) opacity logit

    def __len__(self):
        return len(self.r)

    @classmethod
    def defaults(cls, n: int, scale: float = DEFAULT_SCALE, opacity: float = DEFAULT_OPACITY,
                 dtype=np.float64) -> FaceGaussians:
        enc = default_encoding(scale, opacity)
        return cls.from_packed(np.tile(enc, (n, 1)).astype(dtype))

    def packed(self) -> np.ndarray:
        return np.concatenate([self.r, self.s, self.c, self.o, self.alpha[:, None]], axis=1)

    @classmethod
    def from_packed(cls, x: np.ndarray) -> FaceGaussians:
        x = np.asarray(x)
        return cls(x[:, 0:3], x[:, 3:6], x[:, 6:9], x[:, 9:12], x[:, 12])


def default_encoding(scale: float = DEFAULT_SCALE, opacity: float = DEFAULT_OPACITY) -> np.ndarray:
    enc = np.zeros(ENCODING_WIDTH)
    enc[3:6] = np.log(scale)
    enc[12] = np.log(opacity / (1.0 - opacity))
    return enc


def _exp_coeffs(theta2: Tensor):
    """``sin(t)/t`` and ``(1 - cos t)/t^2`` as functions of ``t^2``, smooth at 0."""
    x = theta2.data
    small = x < 1e-2
    xs = np.where(small, 1.0, x)
    t = np.sqrt(xs)
    a = np.where(small, 1 - x / 6 + x * x / 120 - x ** 3 / 5040, np.sin(t) / t)
    b = np.where(small, 0.5 - x / 24 + x * x / 720 - x ** 3 / 40320, (1 - np.cos(t)) / xs)
    da = np.where(small, -1 / 6 + x / 60 - x * x / 1680, (t * np.cos(t) - np.sin(t)) / (2 * xs * t))
    db = np.where(small, -1 / 24 + x / 360 - x * x / 13440, np.sin(t) / (2 * xs * t) - (1 - np.cos(t)) / (xs * xs))
    ta = ops.custom(a.astype(x.dtype), (theta2,), lambda g: (g * da,))
    tb = ops.custom(b.astype(x.dtype), (theta2,), lambda g: (g * db,))
    return ta, tb


_HAT = np.zeros((3, 3, 3))
_HAT[0, 2, 1], _HAT[0, 1, 2] = 1, -1
_HAT[1, 0, 2], _HAT[1, 2, 0] = 1, -1
_HAT[2, 1, 0], _HAT[2, 0, 1] = 1, -1


def exp_so3(r) -> Tensor:
    """Rodrigues' formula on the tape, (F, 3) -> (F, 3, 3)."""
    r = ops.as_tensor(r)
    K = ops.einsum("kij,fk->fij", _HAT.astype(r.dtype), r)
    a, b = _exp_coeffs(ops.tsum(r * r, axis=1))
    K2 = ops.matmul(K, K)
    eye = np.eye(3, dtype=r.dtype)
    return eye + ops.reshape(a, (-1, 1, 1)) * K + ops.reshape(b, (-1, 1, 1)) * K2


def decode(enc) -> dict:
    """Map packed (F, 13) encodings to usable Gaussian quantities.

    Scale is clamped to [1e-4, 10], offsets are tanh-bounded to +-2 local
    units, color and opacity go through a sigmoid.
    """
    enc = ops.as_tensor(enc)
    lo, hi = np.log(SCALE_MIN), np.log(SCALE_MAX)
    return {
        "rot": exp_so3(enc[:, 0:3]),
        "scale": ops.exp(ops.clip(enc[:, 3:6], lo, hi)),
        "color": ops.sigmoid(enc[:, 6:9]),
        "offset": OFFSET_BOUND * ops.tanh(enc[:, 9:12] * (1.0 / OFFSET_BOUND)),
        "opacity": ops.sigmoid(enc[:, 12]),
    }


@dataclass(frozen=True)
class CanonicalGoM:
    low_mesh: TriMesh
    weights_idx: np.ndarray
    weights_val: np.ndarray
    high_faces: np.ndarray
    prolongation: Prolongation
    gaussians: FaceGaussians
    levels: int

    @property
    def low_vertices(self) -> np.ndarray:
        return self.low_mesh.vertices

    @property
    def high_mesh(self) -> TriMesh:
        return TriMesh(prolong(self.prolongation, self.low_mesh.vertices), self.high_faces)

    def with_low_vertices(self, v) -> CanonicalGoM:
        return replace(self, low_mesh=TriMesh(v, self.low_mesh.faces))

    def with_gaussians(self, g: FaceGaussians) -> CanonicalGoM:
        return replace(self, gaussians=g)

    def violations(self) -> list[str]:
        out = []
        ref_mesh, ref_P = subdivide_levels(TriMesh(self.low_mesh.vertices, self.low_mesh.faces), self.levels)
        if not np.array_equal(ref_mesh.faces, self.high_faces):
            out.append(f"high faces are not {self.levels} midpoint subdivisions of the low mesh")
        if ref_P.rows != self.prolongation.rows:
            out.append("prolongation row count mismatch")
        else:
            err = np.abs(prolong(self.prolongation, self.low_mesh.vertices) - ref_mesh.vertices).max()
            if err > 1e-12:
                out.append(f"prolongation does not reproduce high-res positions (err {err:.2e})")
        if len(self.gaussians) != len(self.high_faces):
            out.append(f"{len(self.gaussians)} face Gaussians for {len(self.high_faces)} faces")
        return out


def init_canonical(rig: Rig, k: int, scale: float = DEFAULT_SCALE,
                   opacity: float = DEFAULT_OPACITY) -> CanonicalGoM:
    if k not in (0, 1, 2, 3):
        raise ValueError(f"subdivision levels must be in 0..3, got {k}")
    report = validate_mesh(rig.template)
    if not report.ok:
        raise ValueError("invalid rig template: " + "; ".join(report.violations[:5]))
    high, P = subdivide_levels(rig.template, k)
    return CanonicalGoM(
        low_mesh=rig.template,
        weights_idx=rig.weights_idx,
        weights_val=rig.weights_val,
        high_faces=high.faces,
        prolongation=P,
        gaussians=FaceGaussians.defaults(high.n_faces, scale, opacity),
        levels=k,
    )


@dataclass(frozen=True)
class PosedGoM:
    low_vertices: np.ndarray
    high_vertices: np.ndarray
    gom: CanonicalGoM

    @property
    def gaussians(self) -> FaceGaussians:
        return self.gom.gaussians


def articulate(gom: CanonicalGoM, pose: Pose) -> PosedGoM:
    if pose.n_joints <= int(gom.weights_idx.max()):
        raise ValueError("pose has fewer joints than the skinning weights reference")
    low = skin(gom.low_mesh.vertices, gom.weights_idx, gom.weights_val, pose)
    return PosedGoM(low, prolong(gom.prolongation, low), gom)


@dataclass(frozen=True)
class WorldGaussians:
    """Splat-ready Gaussians, struct-of-arrays."""

    mu: np.ndarray  # (G, 3)
    sigma: np.ndarray  # (G, 3, 3)
    color: np.ndarray  # (G, 3)
    opacity: np.ndarray  # (G,)

    def __len__(self):
        return len(self.mu)

    def subset(self, idx) -> WorldGaussians:
        return WorldGaussians(self.mu[idx], self.sigma[idx], self.color[idx], self.opacity[idx])


def world_from_decoded(high_vertices, faces: np.ndarray, dec: dict):
    """Place decoded face-local Gaussians on a posed high-res mesh.

    Returns tensors ``(mu, sigma, color, opacity)``.
    """
    v = ops.as_tensor(high_vertices)
    tri = ops.take(v, faces, axis=0)  # (F, 3, 3)
    v1, v2, v3 = tri[:, 0], tri[:, 1], tri[:, 2]
    A = ops.as_tensor(face_frames(v1, v2, v3))
    centroid = (v1 + v2 + v3) * (1.0 / 3.0)
    offset = dec["offset"]
    mu = centroid + (A @ offset.reshape(*offset.shape, 1)).reshape(*offset.shape)
    M = (A @ dec["rot"]) * dec["scale"].reshape(-1, 1, 3)
    sigma = M @ ops.transpose(M, (0, 2, 1))
    return mu, sigma, dec["color"], dec["opacity"]


def gaussians_world(posed: PosedGoM) -> WorldGaussians:
    dec = decode(posed.gaussians.packed())
    mu, sigma, color, opacity = world_from_decoded(posed.high_vertices, posed.gom.high_faces, dec)
    return WorldGaussians(mu.data, sigma.data, color.data, opacity.data)

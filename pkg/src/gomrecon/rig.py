"""Skeleton, poses and linear blend skinning of the low-resolution mesh."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .diff import Tensor, ops
from .geometry import TriMesh, validate_mesh

MAX_INFLUENCES = 4


# --------------------------------------------------------------- rotations


def quat_to_matrix(q) -> np.ndarray:
    """Unit quaternions (..., 4) in wxyz order to rotation matrices (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
    ], -2)


def matrix_to_quat(R) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((len(flat), 4))
    for i, m in enumerate(flat):
        tr = np.trace(m)
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        out[i] = q if q[0] >= 0 else -q
    return out.reshape(R.shape[:-2] + (4,))


def rotvec_to_matrix(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    theta = np.linalg.norm(r, axis=-1)[..., None, None]
    K = hat(r)
    small = theta < 1e-8
    th = np.where(small, 1.0, theta)
    a = np.where(small, 1.0, np.sin(th) / th)
    b = np.where(small, 0.5, (1 - np.cos(th)) / (th * th))
    return np.eye(3) + a * K + b * (K @ K)


def hat(r) -> np.ndarray:
    r = np.asarray(r)
    z = np.zeros(r.shape[:-1])
    x, y, w = r[..., 0], r[..., 1], r[..., 2]
    return np.stack([np.stack([z, -w, y], -1), np.stack([w, z, -x], -1), np.stack([-y, x, z], -1)], -2)


# --------------------------------------------------------------- types


@dataclass(frozen=True)
class Pose:
    """Composed per-joint skinning transforms ``v -> R_j v + t_j``."""

    rotations: np.ndarray  # (J, 4) wxyz
    translations: np.ndarray  # (J, 3) meters

    def __post_init__(self):
        object.__setattr__(self, "rotations", np.asarray(self.rotations, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "translations", np.asarray(self.translations, dtype=np.float64).reshape(-1, 3))
        if len(self.rotations) != len(self.translations):
            raise ValueError("rotation and translation counts differ")
        norms = np.linalg.norm(self.rotations, axis=1)
        if np.any(np.abs(norms - 1) > 1e-9):
            raise ValueError(f"pose quaternions must be unit norm (max deviation {np.abs(norms - 1).max():.2e})")

    @property
    def n_joints(self) -> int:
        return len(self.rotations)

    @classmethod
    def identity(cls, n_joints: int) -> Pose:
        q = np.zeros((n_joints, 4))
        q[:, 0] = 1
        return cls(q, np.zeros((n_joints, 3)))

    def matrices(self) -> np.ndarray:
        return quat_to_matrix(self.rotations)

    def to_json(self) -> dict:
        return {"rotations": self.rotations.tolist(), "translations": self.translations.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> Pose:
        return cls(np.array(d["rotations"]), np.array(d["translations"]))

    def rigid_left(self, R: np.ndarray, t: np.ndarray) -> Pose:
        """Compose a global rigid motion after every joint transform."""
        Rs = R @ self.matrices()
        ts = self.translations @ R.T + t
        return Pose(matrix_to_quat(Rs), ts)


@dataclass(frozen=True)
class Rig:
    parent: np.ndarray  # (J,) int, -1 for roots
    rest_rotation: np.ndarray  # (J, 4) wxyz
    rest_translation: np.ndarray  # (J, 3)
    template: TriMesh
    weights_idx: np.ndarray  # (V, 4) int
    weights_val: np.ndarray  # (V, 4) float, zero-padded

    def __post_init__(self):
        object.__setattr__(self, "parent", np.asarray(self.parent, dtype=np.int64))
        object.__setattr__(self, "rest_rotation", np.asarray(self.rest_rotation, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "rest_translation", np.asarray(self.rest_translation, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "weights_idx", np.asarray(self.weights_idx, dtype=np.int64))
        object.__setattr__(self, "weights_val", np.asarray(self.weights_val, dtype=np.float64))

    @property
    def n_joints(self) -> int:
        return len(self.parent)

    def violations(self) -> list[str]:
        out = []
        J = self.n_joints
        for j in range(J):
            seen, k = set(), j
            while k != -1:
                if k in seen or not (-1 <= self.parent[k] < J):
                    out.append(f"joint {j}: parent chain is cyclic or out of range")
                    break
                seen.add(k)
                k = self.parent[k]
        w = self.weights_val
        if self.weights_idx.shape != w.shape or w.shape[1] > MAX_INFLUENCES:
            out.append(f"weights must be (V, <= {MAX_INFLUENCES}) arrays")
        if len(w) != self.template.n_vertices:
            out.append("weights count differs from template vertex count")
        if np.any(w < 0):
            out.append("negative skinning weight")
        s = w.sum(axis=1)
        for i in np.nonzero((s <= 0) | (s > 1 + 1e-9))[0][:5]:
            out.append(f"vertex {i}: weight sum {s[i]:.6g} outside (0, 1]")
        if np.any((self.weights_idx < 0) | (self.weights_idx >= J)):
            out.append("skinning joint index out of range")
        out += validate_mesh(self.template).violations
        return out


# --------------------------------------------------------------- skinning


def lbs_point(v, weights, pose: Pose, vertex: int | None = None) -> np.ndarray:
    """Skin one point; ``weights`` is a list of ``(joint, weight)`` pairs."""
    total = sum(w for _, w in weights)
    if total <= 0:
        raise ValueError(f"vertex {vertex if vertex is not None else '?'} has zero total skinning weight")
    R = pose.matrices()
    v = np.asarray(v, dtype=np.float64)
    acc = np.zeros(3)
    for j, w in weights:
        acc += w * (R[j] @ v + pose.translations[j])
    return acc / total


def blend_transforms(weights_idx, weights_val, pose: Pose):
    """Per-vertex blended ``(R - I)`` and translation with normalized weights."""
    total = weights_val.sum(axis=1)
    bad = np.nonzero(total <= 0)[0]
    if len(bad):
        raise ValueError(f"vertex {int(bad[0])} has zero total skinning weight")
    wn = weights_val / total[:, None]
    R = pose.matrices() - np.eye(3)
    B = np.einsum("vk,vkij->vij", wn, R[weights_idx])
    t = np.einsum("vk,vki->vi", wn, pose.translations[weights_idx])
    return B, t


def skin(positions, weights_idx, weights_val, pose: Pose):
    """Linear blend skinning written as ``v + sum_k w_k ((R_k - I) v + t_k)``.

    The form is algebraically the normalized blend but returns the input
    bit-for-bit under the identity pose.
    """
    if weights_idx.shape[0] != positions.shape[0]:
        raise ValueError(f"expected {weights_idx.shape[0]} positions, got {positions.shape[0]}")
    B, t = blend_transforms(weights_idx, weights_val, pose)
    if isinstance(positions, Tensor):
        dt = positions.dtype
        return positions + ops.einsum("vij,vj->vi", B.astype(dt), positions) + t.astype(dt)
    p = np.asarray(positions)
    return p + (np.einsum("vij,vj->vi", B, p) + t).astype(p.dtype)


def pose_mesh(rig: Rig, canonical_positions, pose: Pose):
    if pose.n_joints != rig.n_joints:
        raise ValueError(f"pose has {pose.n_joints} joints, rig has {rig.n_joints}")
    return skin(canonical_positions, rig.weights_idx, rig.weights_val, pose)


def perturb_pose(pose: Pose, sigma: float, seed: int) -> Pose:
    """Add i.i.d. normal noise to every translation component and, in the
    axis-angle tangent space, to every rotation."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    if sigma == 0:
        return pose
    rng = np.random.default_rng(seed)
    J = pose.n_joints
    dR = rotvec_to_matrix(rng.normal(0.0, sigma, size=(J, 3)))
    dt = rng.normal(0.0, sigma, size=(J, 3))
    q = matrix_to_quat(dR @ pose.matrices())
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return Pose(q, pose.translations + dt)


def forward_kinematics(rig: Rig, local_rotvecs, root_translation=(0.0, 0.0, 0.0)) -> Pose:
    """Skinning transforms from local joint rotations (axis-angle per joint).

    Each joint rotates about its rest position; children inherit the motion
    of their parents. The root additionally moves by ``root_translation``.
    """
    local = rotvec_to_matrix(np.asarray(local_rotvecs, dtype=np.float64).reshape(rig.n_joints, 3))
    rest_R = quat_to_matrix(rig.rest_rotation)
    rest_p = rig.rest_translation
    glob_R = np.zeros((rig.n_joints, 3, 3))
    glob_p = np.zeros((rig.n_joints, 3))
    done = np.zeros(rig.n_joints, dtype=bool)

    def solve(j):
        if done[j]:
            return
        p = rig.parent[j]
        if p < 0:
            glob_R[j] = rest_R[j] @ local[j]
            glob_p[j] = rest_p[j] + np.asarray(root_translation)
        else:
            solve(p)
            rel_R = rest_R[p].T @ rest_R[j]
            rel_p = rest_R[p].T @ (rest_p[j] - rest_p[p])
            glob_R[j] = glob_R[p] @ rel_R @ local[j]
            glob_p[j] = glob_R[p] @ rel_p + glob_p[p]
        done[j] = True

    for j in range(rig.n_joints):
        solve(j)
    skin_R = glob_R @ np.swapaxes(rest_R, -1, -2)
    skin_t = glob_p - np.einsum("jab,jb->ja", skin_R, rest_p)
    return Pose(matrix_to_quat(skin_R), skin_t)


# --------------------------------------------------------------- file format


def rig_to_json(rig: Rig) -> dict:
    joints = [{"parent": int(p), "rest_rotation": q.tolist(), "rest_translation": t.tolist()}
              for p, q, t in zip(rig.parent, rig.rest_rotation, rig.rest_translation)]
    weights = []
    for idx, val in zip(rig.weights_idx, rig.weights_val):
        weights.append([[int(j), float(w)] for j, w in zip(idx, val) if w > 0])
    return {
        "joints": joints,
        "template": {"vertices": rig.template.vertices.tolist(), "faces": rig.template.faces.tolist()},
        "weights": weights,
    }


def rig_from_json(d: dict) -> Rig:
    for key in ("joints", "template", "weights"):
        if key not in d:
            raise KeyError(f"rig document is missing field {key!r}")
    joints = d["joints"]
    idx = np.zeros((len(d["weights"]), MAX_INFLUENCES), dtype=np.int64)
    val = np.zeros((len(d["weights"]), MAX_INFLUENCES))
    for i, entries in enumerate(d["weights"]):
        if len(entries) > MAX_INFLUENCES:
            raise ValueError(f"weights[{i}]: more than {MAX_INFLUENCES} influences")
        for k, (j, w) in enumerate(entries):
            idx[i, k], val[i, k] = j, w
    return Rig(
        parent=[j["parent"] for j in joints],
        rest_rotation=[j["rest_rotation"] for j in joints],
        rest_translation=[j["rest_translation"] for j in joints],
        template=TriMesh(np.array(d["template"]["vertices"]), np.array(d["template"]["faces"])),
        weights_idx=idx,
        weights_val=val,
    )


def save_rig(rig: Rig, path) -> None:
    Path(path).write_text(json.dumps(rig_to_json(rig)))


def load_rig(path) -> Rig:
    return rig_from_json(json.loads(Path(path).read_text()))

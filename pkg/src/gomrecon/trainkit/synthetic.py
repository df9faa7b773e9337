"""Procedural articulated "tube-person" subjects and a z-buffer reference renderer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import TriMesh, unique_edges
from ..rig import MAX_INFLUENCES, Pose, Rig, forward_kinematics, skin
from ..splat import CameraModel, orbit_camera
from ..splat._kernels import zbuffer_triangles

JOINT_NAMES = ("root", "l_shoulder", "l_elbow", "r_shoulder", "r_elbow",
               "l_hip", "l_knee", "r_hip", "r_knee")
PARENTS = np.array([-1, 0, 1, 0, 3, 0, 5, 0, 7])
# bone direction in the T-pose, length and radius defaults (meters)
BONE_DIR = np.array([[0, 1, 0], [1, 0, 0], [1, 0, 0], [-1, 0, 0], [-1, 0, 0],
                     [0, -1, 0], [0, -1, 0], [0, -1, 0], [0, -1, 0]], dtype=np.float64)
BONE_LEN = np.array([0.70, 0.30, 0.30, 0.30, 0.30, 0.42, 0.42, 0.42, 0.42])
BONE_RADIUS = np.array([0.19, 0.085, 0.075, 0.085, 0.075, 0.105, 0.09, 0.105, 0.09])
PELVIS = np.array([0.0, 0.95, 0.0])
SHOULDER_OFFSET = np.array([0.20, 0.56, 0.0])
HIP_OFFSET = np.array([0.105, -0.04, 0.0])
SKIN_WIDTH = 0.06
BODY_CENTER = np.array([0.0, 1.0, 0.0])

TEMPLATE_SEGMENTS, TEMPLATE_RINGS = 6, 3
SURFACE_SEGMENTS, SURFACE_RINGS = 20, 10
TEXTURE_SIZE = 32


@dataclass(frozen=True)
class Texture:
    """Per-bone texel grids indexed by (u, v) in [0, 1]^2, linear RGB."""

    texels: np.ndarray  # (bones, TEXTURE_SIZE, TEXTURE_SIZE, 3)

    def lookup(self, bone: np.ndarray, uv: np.ndarray) -> np.ndarray:
        n = self.texels.shape[1]
        iu = np.clip((uv[..., 0] * n).astype(np.int64), 0, n - 1)
        iv = np.clip((uv[..., 1] * n).astype(np.int64), 0, n - 1)
        return self.texels[bone, iv, iu]


@dataclass(frozen=True)
class SyntheticSubject:
    seed: int
    rig: Rig
    surface: TriMesh
    surface_uv: np.ndarray  # (V, 2)
    surface_bone: np.ndarray  # (F,) bone id per face
    surface_weights_idx: np.ndarray
    surface_weights_val: np.ndarray
    texture: Texture
    bone_radius: np.ndarray
    bone_length: np.ndarray


def joint_positions(lengths: np.ndarray, shoulder_scale: float = 1.0) -> np.ndarray:
    """Rest joint positions for the T-pose skeleton."""
    p = np.zeros((9, 3))
    p[0] = PELVIS
    for side, (sh, el, hip, kn) in ((1, (1, 2, 5, 6)), (-1, (3, 4, 7, 8))):
        mirror = np.array([side, 1.0, 1.0])
        p[sh] = PELVIS + SHOULDER_OFFSET * shoulder_scale * mirror
        p[el] = p[sh] + BONE_DIR[sh] * lengths[sh]
        p[hip] = PELVIS + HIP_OFFSET * mirror
        p[kn] = p[hip] + BONE_DIR[hip] * lengths[hip]
    return p


def bone_segments(joints: np.ndarray, lengths: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    starts = joints.copy()
    ends = joints + BONE_DIR * lengths[:, None]
    return starts, ends


def _tube_frame(a, b):
    axis = (b - a) / np.linalg.norm(b - a)
    helper = np.array([0.0, 0.0, 1.0]) if abs(axis[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    e1 = np.cross(axis, helper)
    e1 /= np.linalg.norm(e1)
    return axis, e1, np.cross(axis, e1)


def _tube(a, b, radius: float, segments: int, rings: int, seam: bool):
    """Closed tube around segment ``a -> b`` with conical end caps.

    With ``seam`` the first column is repeated at the end so that (u, v)
    stays continuous on every face; otherwise the ring wraps around.
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    axis, e1, e2 = _tube_frame(a, b)
    cols = segments + 1 if seam else segments
    ts = np.linspace(0.0, 1.0, rings)
    ang = 2 * np.pi * np.arange(cols) / segments
    pts = (a[None, None] + ts[:, None, None] * (b - a)[None, None]
           + radius * (np.cos(ang)[None, :, None] * e1 + np.sin(ang)[None, :, None] * e2))
    if seam:
        pts[:, segments] = pts[:, 0]
    verts = np.concatenate([pts.reshape(-1, 3), (a - radius * axis)[None], (b + radius * axis)[None]])
    bottom, top = rings * cols, rings * cols + 1
    nxt = (lambda s: s + 1) if seam else (lambda s: (s + 1) % segments)
    faces = []
    for r in range(rings - 1):
        for s in range(segments):
            i0, i1 = r * cols + s, r * cols + nxt(s)
            faces += [[i0, i1, i1 + cols], [i0, i1 + cols, i0 + cols]]
    last = (rings - 1) * cols
    for s in range(segments):
        faces.append([bottom, nxt(s), s])
        faces.append([top, last + s, last + nxt(s)])
    faces = np.array(faces, dtype=np.int64)
    f = faces[0]
    n = np.cross(verts[f[1]] - verts[f[0]], verts[f[2]] - verts[f[0]])
    if np.dot(n, verts[f].mean(axis=0) - (a + b) / 2) < 0:
        faces = faces[:, ::-1].copy()
    u = np.tile(np.arange(cols) / segments, rings)
    v = np.repeat(0.1 + 0.8 * ts, cols)
    uv = np.concatenate([np.stack([u, v], 1), [[0.5, 0.0], [0.5, 1.0]]])
    return verts, faces, np.clip(uv, 0.0, 1.0)


def capsule(a, b, radius: float, segments: int, rings: int):
    """Watertight low-poly tube; returns (vertices, faces)."""
    verts, faces, _ = _tube(a, b, radius, segments, rings, seam=False)
    return verts, faces


def capsule_uv(a, b, radius: float, segments: int, rings: int):
    """Textured tube with a duplicated seam column; returns (vertices, faces, uv)."""
    return _tube(a, b, radius, segments, rings, seam=True)


def segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Distance from points (V, 3) to each segment ``a[j] -> b[j]``, (V, J)."""
    ab = b - a
    t = np.einsum("vjk,jk->vj", p[:, None, :] - a[None], ab) / np.einsum("jk,jk->j", ab, ab)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(p[:, None, :] - closest, axis=-1)


def skinning_weights(points: np.ndarray, owner: np.ndarray, starts, ends, radius: np.ndarray):
    """Smooth distance-based weights, at most four influences per vertex.

    Distances are measured to each bone's surface (segment distance minus the
    bone radius), so a vertex is dominated by the tube it lies on while
    blending with neighbouring bones near joints.
    """
    d = segment_distance(points, starts, ends) - radius[None]
    d = np.maximum(d, 0.0)
    w = np.exp(-0.5 * (d / SKIN_WIDTH) ** 2)
    # bones further than one joint away from the owner never influence it
    J = len(radius)
    adj = np.eye(J, dtype=bool)
    for j, p in enumerate(PARENTS):
        if p >= 0:
            adj[j, p] = adj[p, j] = True
    w = w * adj[owner]
    order = np.argsort(-w, axis=1, kind="stable")[:, :MAX_INFLUENCES]
    idx = order.astype(np.int64)
    val = np.take_along_axis(w, order, axis=1)
    val = val / val.sum(axis=1, keepdims=True)
    val[val < 1e-4] = 0.0
    val = val / val.sum(axis=1, keepdims=True)
    return idx, val


def _merge(parts):
    verts, faces, extra, off = [], [], [], 0
    for v, f, e in parts:
        verts.append(v)
        faces.append(f + off)
        extra.append(e)
        off += len(v)
    return np.concatenate(verts), np.concatenate(faces), extra


def build_template(joints, lengths) -> tuple[TriMesh, np.ndarray]:
    """Low-poly hull with default (subject independent) radii."""
    starts, ends = bone_segments(joints, lengths)
    parts = []
    for j in range(9):
        v, f = capsule(starts[j], ends[j], BONE_RADIUS[j], TEMPLATE_SEGMENTS, TEMPLATE_RINGS)
        parts.append((v, f, np.full(len(v), j)))
    v, f, owners = _merge(parts)
    return TriMesh(v, f), np.concatenate(owners)


def _texture(rng: np.random.Generator) -> Texture:
    n = TEXTURE_SIZE
    tex = np.empty((9, n, n, 3))
    for j in range(9):
        hue = rng.uniform(0, 1)
        sat = rng.uniform(0.45, 0.9)
        val = rng.uniform(0.55, 0.95)
        base = _hsv_to_rgb(hue, sat, val)
        other = _hsv_to_rgb((hue + rng.uniform(0.25, 0.5)) % 1.0, rng.uniform(0.3, 0.8), rng.uniform(0.25, 0.6))
        cu, cv = rng.integers(3, 7), rng.integers(2, 5)
        iu = (np.arange(n) * cu // n)[None, :]
        iv = (np.arange(n) * cv // n)[:, None]
        checker = ((iu + iv) % 2).astype(float)[..., None]
        coarse = rng.normal(0.0, 0.06, size=(5, 5, 3))
        xs = np.linspace(0, 4, n)
        i0 = np.minimum(xs.astype(int), 3)
        fr = xs - i0
        rows = coarse[i0] * (1 - fr)[:, None, None] + coarse[i0 + 1] * fr[:, None, None]
        noise = rows[:, i0] * (1 - fr)[None, :, None] + rows[:, i0 + 1] * fr[None, :, None]
        tex[j] = np.clip(checker * base + (1 - checker) * other + noise, 0.0, 1.0)
    return Texture(tex)


def _hsv_to_rgb(h, s, v):
    i = int(h * 6) % 6
    f = h * 6 - int(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    return np.array([(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)][i])


def make_synthetic_subject(seed: int) -> SyntheticSubject:
    rng = np.random.default_rng([seed, 0x5EED])
    lengths = BONE_LEN * rng.uniform(0.8, 1.2, size=9)
    radius = BONE_RADIUS * rng.uniform(0.8, 1.2, size=9)
    # keep left/right limbs of one subject close to symmetric
    for l, r in ((1, 3), (2, 4), (5, 7), (6, 8)):
        m = 0.5 * (lengths[l] + lengths[r])
        lengths[l] = lengths[r] = m
    joints = joint_positions(lengths)
    starts, ends = bone_segments(joints, lengths)

    template, owner = build_template(joints, lengths)
    w_idx, w_val = skinning_weights(template.vertices, owner, starts, ends, BONE_RADIUS)
    rest_q = np.tile([1.0, 0.0, 0.0, 0.0], (9, 1))
    rig = Rig(PARENTS, rest_q, joints, template, w_idx, w_val)

    parts = []
    for j in range(9):
        v, f, uv = capsule_uv(starts[j], ends[j], radius[j], SURFACE_SEGMENTS, SURFACE_RINGS)
        parts.append((v, f, (uv, np.full(len(f), j), np.full(len(v), j))))
    sv, sf, extra = _merge(parts)
    uv = np.concatenate([e[0] for e in extra])
    bone = np.concatenate([e[1] for e in extra])
    sowner = np.concatenate([e[2] for e in extra])
    s_idx, s_val = skinning_weights(sv, sowner, starts, ends, radius)
    return SyntheticSubject(seed, rig, TriMesh(sv, sf), uv, bone, s_idx, s_val, _texture(rng), radius, lengths)


def random_local_pose(rng: np.random.Generator, scale: float = 1.0) -> np.ndarray:
    """Axis-angle local rotations for a plausible random pose, (9, 3)."""
    r = np.zeros((9, 3))
    r[0, 1] = rng.uniform(-0.6, 0.6) * scale
    r[1, 2] = -rng.uniform(0.1, 1.2) * scale
    r[3, 2] = rng.uniform(0.1, 1.2) * scale
    r[1, 1] = rng.uniform(-0.5, 0.5) * scale
    r[3, 1] = rng.uniform(-0.5, 0.5) * scale
    r[2, 1] = rng.uniform(0.0, 1.3) * scale
    r[4, 1] = -rng.uniform(0.0, 1.3) * scale
    r[5, 0] = rng.uniform(-0.6, 0.5) * scale
    r[7, 0] = rng.uniform(-0.6, 0.5) * scale
    r[5, 2] = rng.uniform(-0.05, 0.3) * scale
    r[7, 2] = -rng.uniform(-0.05, 0.3) * scale
    r[6, 0] = rng.uniform(0.0, 1.1) * scale
    r[8, 0] = rng.uniform(0.0, 1.1) * scale
    return r


def random_pose(rig: Rig, rng: np.random.Generator, scale: float = 1.0) -> Pose:
    return forward_kinematics(rig, random_local_pose(rng, scale))


def default_focal(width: int) -> float:
    return 1.55 * width


def view_camera(azimuth: float, elevation: float, width: int, height: int | None = None,
                radius: float = 3.2) -> CameraModel:
    height = width if height is None else height
    return orbit_camera(azimuth, elevation, radius, BODY_CENTER, focal=default_focal(width),
                        width=width, height=height)


def render_mesh(vertices, faces, attr, cam: CameraModel):
    """Z-buffer raster of a mesh; returns interpolated attributes, coverage and face ids."""
    W, H = int(cam.width), int(cam.height)
    uv, z = cam.project_points(np.asarray(vertices, dtype=np.float64))
    attr = np.ascontiguousarray(attr, dtype=np.float64)
    zbuf = np.full((H, W), np.inf)
    out = np.zeros((H, W, attr.shape[1]))
    face_id = np.full((H, W), -1, dtype=np.int64)
    zbuffer_triangles(np.ascontiguousarray(uv), np.ascontiguousarray(z), np.ascontiguousarray(faces, dtype=np.int64),
                      attr, W, H, zbuf, out, face_id)
    return out, face_id >= 0, face_id


def render_reference(subject: SyntheticSubject, pose: Pose, cam: CameraModel):
    """Ground-truth image and binary mask of the dense textured surface."""
    if pose.n_joints != subject.rig.n_joints:
        raise ValueError("pose joint count does not match the subject")
    posed = skin(subject.surface.vertices, subject.surface_weights_idx, subject.surface_weights_val, pose)
    attr, mask, face_id = render_mesh(posed, subject.surface.faces, subject.surface_uv, cam)
    image = np.zeros(attr.shape[:2] + (3,))
    bone = subject.surface_bone[np.where(mask, face_id, 0)]
    image[mask] = subject.texture.lookup(bone[mask], attr[mask])
    return image, mask.astype(np.float64)


def render_template(rig: Rig, pose: Pose, cam: CameraModel, gray: float = 0.5):
    """Flat gray z-buffer render of a rig template (used as a silhouette reference)."""
    posed = skin(rig.template.vertices, rig.weights_idx, rig.weights_val, pose)
    _, mask, _ = render_mesh(posed, rig.template.faces, np.zeros((len(posed), 1)), cam)
    image = np.where(mask[..., None], gray, 0.0) * np.ones(3)
    return image, mask.astype(np.float64)


def edges_count(mesh: TriMesh) -> int:
    return len(unique_edges(mesh.faces))

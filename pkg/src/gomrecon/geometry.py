"""Triangle-mesh core: validation, midpoint subdivision, face frames, Laplacian."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .diff import Tensor, ops

DEGENERATE_AREA = 1e-12


class DegenerateFaceError(ValueError):
    pass


class InvalidMeshError(ValueError):
    def __init__(self, report: ValidationReport):
        super().__init__("invalid mesh: " + "; ".join(report.violations[:5]))
        self.report = report


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray  # (V, 3) float, meters
    faces: np.ndarray  # (F, 3) int, counter-clockwise

    def __post_init__(self):
        object.__setattr__(self, "vertices", np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        object.__setattr__(self, "faces", np.asarray(self.faces, dtype=np.int64).reshape(-1, 3))

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def edges(self) -> np.ndarray:
        return unique_edges(self.faces)

    def with_vertices(self, vertices) -> TriMesh:
        return TriMesh(vertices, self.faces)


@dataclass
class ValidationReport:
    ok: bool
    violations: list[str] = field(default_factory=list)

    def __bool__(self):
        return self.ok


def unique_edges(faces: np.ndarray) -> np.ndarray:
    """Undirected edges as sorted ``(min, max)`` rows, lexicographically ordered."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    e = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    e = np.sort(e, axis=1)
    return np.unique(e, axis=0)


def validate_mesh(mesh: TriMesh) -> ValidationReport:
    violations = []
    f = mesh.faces
    nv = mesh.n_vertices
    bad_idx = np.nonzero(((f < 0) | (f >= nv)).any(axis=1))[0]
    for j in bad_idx:
        violations.append(f"face {j} index out of range")
    degenerate = np.nonzero((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 2] == f[:, 0]))[0]
    for j in degenerate:
        violations.append(f"degenerate face {j}")
    if len(f):
        directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        owner = np.tile(np.arange(len(f)), 3)
        und = np.sort(directed, axis=1)
        keys, inv, counts = np.unique(und, axis=0, return_inverse=True, return_counts=True)
        for ei in np.nonzero(counts > 2)[0]:
            fs = sorted(set(owner[inv.reshape(-1) == ei].tolist()))
            violations.append(f"non-manifold edge ({keys[ei, 0]}, {keys[ei, 1]}) shared by faces {fs}")
        dkeys, dinv, dcounts = np.unique(directed, axis=0, return_inverse=True, return_counts=True)
        for ei in np.nonzero(dcounts > 1)[0]:
            a, b = dkeys[ei]
            if a == b:
                continue
            fs = sorted(set(owner[dinv.reshape(-1) == ei].tolist()))
            violations.append(f"inconsistent winding on edge ({min(a, b)}, {max(a, b)}) in faces {fs}")
    return ValidationReport(not violations, violations)


@dataclass(frozen=True)
class Prolongation:
    """Sparse low-to-high vertex map stored as padded ``(index, weight)`` rows.

    Padding slots carry weight 0 and index 0.
    """

    idx: np.ndarray  # (V_high, K) int64
    val: np.ndarray  # (V_high, K) float64
    n_low: int

    @property
    def rows(self) -> int:
        return len(self.idx)

    @property
    def cols(self) -> int:
        return self.n_low

    @classmethod
    def identity(cls, n: int) -> Prolongation:
        return cls(np.arange(n, dtype=np.int64)[:, None], np.ones((n, 1)), n)

    def to_sparse(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.rows), self.idx.shape[1])
        m = sp.coo_matrix((self.val.ravel(), (rows, self.idx.ravel())), shape=(self.rows, self.n_low))
        m = m.tocsr()
        m.eliminate_zeros()
        return m

    @classmethod
    def from_sparse(cls, m) -> Prolongation:
        m = sp.csr_matrix(m)
        m.sum_duplicates()
        m.eliminate_zeros()
        m.sort_indices()
        counts = np.diff(m.indptr)
        k = max(int(counts.max()) if len(counts) else 1, 1)
        idx = np.zeros((m.shape[0], k), dtype=np.int64)
        val = np.zeros((m.shape[0], k))
        for r in range(m.shape[0]):
            s, e = m.indptr[r], m.indptr[r + 1]
            idx[r, : e - s] = m.indices[s:e]
            val[r, : e - s] = m.data[s:e]
        return cls(idx, val, m.shape[1])

    def compose(self, inner: Prolongation) -> Prolongation:
        """``self ∘ inner``: first apply ``inner``, then ``self``."""
        if self.n_low != inner.rows:
            raise ValueError("prolongation shapes do not chain")
        return Prolongation.from_sparse(self.to_sparse() @ inner.to_sparse())


def subdivide_midpoint(mesh: TriMesh) -> tuple[TriMesh, Prolongation]:
    """Split every face 4-to-1 at its edge midpoints.

    New vertices are appended after the originals, one per undirected edge, in
    sorted ``(min endpoint, max endpoint)`` order. Face ``j`` becomes faces
    ``4j .. 4j+3`` with the winding of the parent.
    """
    report = validate_mesh(mesh)
    if not report.ok:
        raise InvalidMeshError(report)
    nv = mesh.n_vertices
    edges = unique_edges(mesh.faces)
    f = mesh.faces

    def mid(a, b):
        key = np.sort(np.stack([a, b], axis=1), axis=1)
        pos = np.searchsorted(edges[:, 0] * (nv + 1) + edges[:, 1], key[:, 0] * (nv + 1) + key[:, 1])
        return nv + pos

    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
    new_faces = np.stack([
        np.stack([a, ab, ca], axis=1),
        np.stack([ab, b, bc], axis=1),
        np.stack([ca, bc, c], axis=1),
        np.stack([ab, bc, ca], axis=1),
    ], axis=1).reshape(-1, 3)

    ne = len(edges)
    idx = np.zeros((nv + ne, 2), dtype=np.int64)
    val = np.zeros((nv + ne, 2))
    idx[:nv, 0] = np.arange(nv)
    val[:nv, 0] = 1.0
    idx[nv:] = edges
    val[nv:] = 0.5
    P = Prolongation(idx, val, nv)
    return TriMesh(prolong(P, mesh.vertices), new_faces), P


def subdivide_levels(mesh: TriMesh, k: int) -> tuple[TriMesh, Prolongation]:
    """Apply midpoint subdivision ``k`` times and compose the prolongations."""
    P = Prolongation.identity(mesh.n_vertices)
    for _ in range(k):
        mesh, step = subdivide_midpoint(mesh)
        P = step.compose(P)
    return mesh, P


def prolong(P: Prolongation, low):
    """Weighted combination of low-res rows; accepts arrays or tensors."""
    n = low.shape[0]
    if n != P.cols:
        raise ValueError(f"expected {P.cols} low-res rows, got {n}")
    if isinstance(low, Tensor):
        gathered = ops.take(low, P.idx, axis=0)  # (V, K, ...)
        w = P.val.reshape(P.val.shape + (1,) * (low.ndim - 1))
        return ops.tsum(gathered * w.astype(low.dtype), axis=1)
    low = np.asarray(low)
    w = P.val.reshape(P.val.shape + (1,) * (low.ndim - 1))
    return (low[P.idx] * w).sum(axis=1)


def face_frames(v1, v2, v3):
    """Batched local-to-world frames for triangles (tensor or array inputs).

    Columns are the edge direction ``v2 - v1``, the in-plane perpendicular and
    the unit normal, all scaled by ``sqrt(2 * area)``.
    """
    tensor_in = any(isinstance(v, Tensor) for v in (v1, v2, v3))
    v1, v2, v3 = (ops.as_tensor(v) for v in (v1, v2, v3))
    e1 = v2 - v1
    e2 = v3 - v1
    n = ops.cross(e1, e2)
    nlen = ops.norm(n, keepdims=True)
    area = 0.5 * nlen.data[..., 0]
    bad = np.nonzero(area <= DEGENERATE_AREA)[0] if area.ndim else ([0] if area <= DEGENERATE_AREA else [])
    if len(bad):
        raise DegenerateFaceError(f"degenerate face {int(bad[0])} (area {float(np.ravel(area)[bad[0]]):.3g} m^2)")
    a1 = e1 / ops.norm(e1, keepdims=True)
    a3 = n / nlen
    a2 = ops.cross(a3, a1)
    sigma = ops.sqrt(nlen)
    A = ops.stack([a1, a2, a3], axis=-1) * ops.reshape(sigma, sigma.shape + (1,))
    return A if tensor_in else A.data


def face_frame(v1, v2, v3) -> np.ndarray:
    """Local frame of a single triangle as a 3x3 matrix."""
    v = [np.asarray(x, dtype=np.float64)[None] for x in (v1, v2, v3)]
    return face_frames(*v)[0]


def umbrella_operator(mesh: TriMesh) -> sp.csr_matrix:
    """Sparse ``L`` with ``L @ X`` = mean of 1-ring neighbours minus self."""
    n = mesh.n_vertices
    e = unique_edges(mesh.faces)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n)).tocsr()
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    has = (deg > 0).astype(np.float64)
    return (sp.diags(inv) @ adj - sp.diags(has)).tocsr()


def laplacian_vectors(mesh: TriMesh, positions, L: sp.csr_matrix | None = None):
    if positions.shape[0] != mesh.n_vertices:
        raise ValueError(f"expected {mesh.n_vertices} positions, got {positions.shape[0]}")
    L = umbrella_operator(mesh) if L is None else L
    if isinstance(positions, Tensor):
        Ld = L.astype(positions.dtype)
        return ops.custom(np.asarray(Ld @ positions.data), (positions,), lambda g: (np.asarray(Ld.T @ g),))
    return np.asarray(L @ np.asarray(positions, dtype=np.float64))


def neighbor_table(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Padded ``{self} ∪ 1-ring`` index table and validity mask, self in slot 0."""
    n = mesh.n_vertices
    e = unique_edges(mesh.faces)
    nbrs = [[i] for i in range(n)]
    for a, b in e:
        nbrs[a].append(int(b))
        nbrs[b].append(int(a))
    k = max(len(x) for x in nbrs)
    idx = np.zeros((n, k), dtype=np.int64)
    mask = np.zeros((n, k), dtype=bool)
    for i, row in enumerate(nbrs):
        idx[i, : len(row)] = row
        idx[i, len(row):] = i
        mask[i, : len(row)] = True
    return idx, mask


def euler_characteristic(mesh: TriMesh) -> int:
    return mesh.n_vertices - len(mesh.edges()) + mesh.n_faces


def icosahedron() -> TriMesh:
    t = (1 + 5 ** 0.5) / 2
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], dtype=np.float64)
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    return TriMesh(v, f)


def tetrahedron() -> TriMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float64)
    return TriMesh(v, [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            faces.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    return TriMesh(np.array(verts), np.array(faces, dtype=np.int64))

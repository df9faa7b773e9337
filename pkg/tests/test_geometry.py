import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gomrecon.geometry import (DegenerateFaceError, InvalidMeshError, TriMesh, euler_characteristic, face_frame,
                               face_frames, icosahedron, laplacian_vectors, prolong, read_obj, subdivide_levels,
                               subdivide_midpoint, tetrahedron, unique_edges, validate_mesh, write_obj)
from gomrecon.trainkit.synthetic import capsule

from .conftest import random_rotation


def closed_meshes():
    """Ten closed manifold meshes of varied genus-0 shapes."""
    out = [icosahedron(), tetrahedron(), subdivide_midpoint(icosahedron())[0]]
    for seg, rings in ((4, 1), (5, 2), (6, 3), (8, 2), (3, 1), (7, 4), (10, 5)):
        v, f = capsule(np.zeros(3), np.array([0.0, 1.0, 0.0]), 0.2, seg, rings)
        out.append(TriMesh(v, f))
    return out


def test_icosahedron_valid():
    m = icosahedron()
    assert (m.n_vertices, m.n_faces) == (12, 20)
    assert validate_mesh(m).ok


def test_degenerate_face_reported():
    m = TriMesh(np.eye(3), [[0, 0, 1]])
    rep = validate_mesh(m)
    assert not rep.ok
    assert "degenerate face 0" in rep.violations


def test_inconsistent_winding_names_edge():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], dtype=float)
    m = TriMesh(v, [[0, 1, 2], [1, 2, 3]])  # shared edge (1,2) traversed 1->2 twice
    rep = validate_mesh(m)
    assert not rep.ok
    assert any("(1, 2)" in s and "winding" in s for s in rep.violations)


def test_non_manifold_edge_reported():
    v = np.random.default_rng(0).normal(size=(5, 3))
    m = TriMesh(v, [[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    assert any("non-manifold edge (0, 1)" in s for s in validate_mesh(m).violations)


def test_subdivide_icosahedron_counts():
    m1, _ = subdivide_midpoint(icosahedron())
    assert (m1.n_vertices, len(m1.edges()), m1.n_faces) == (42, 120, 80)
    m2, P = subdivide_levels(icosahedron(), 2)
    assert (m2.n_vertices, len(m2.edges()), m2.n_faces) == (162, 480, 320)
    assert euler_characteristic(m2) == 2
    assert P.rows == 162 and P.cols == 12


def test_tetrahedron_new_vertex_weights():
    m, P = subdivide_midpoint(tetrahedron())
    for r in range(4, m.n_vertices):
        w = P.val[r][P.val[r] > 0]
        assert sorted(w.tolist()) == [0.5, 0.5]
    np.testing.assert_array_equal(P.val[:4, 0], 1.0)


def test_subdivision_ordering_and_winding():
    mesh = icosahedron()
    m, P = subdivide_midpoint(mesh)
    np.testing.assert_array_equal(P.idx[12:], unique_edges(mesh.faces))
    # child normals agree with the parent normal
    for j in range(mesh.n_faces):
        a, b, c = mesh.vertices[mesh.faces[j]]
        n = np.cross(b - a, c - a)
        for child in m.faces[4 * j: 4 * j + 4]:
            x, y, z = m.vertices[child]
            assert np.dot(np.cross(y - x, z - x), n) > 0
    assert validate_mesh(m).ok


def test_subdivide_rejects_invalid():
    with pytest.raises(InvalidMeshError):
        subdivide_midpoint(TriMesh(np.eye(3), [[0, 0, 1]]))


@pytest.mark.parametrize("i", range(10))
def test_subdivision_invariants_closed_meshes(i):
    mesh = closed_meshes()[i]
    V, E, F = mesh.n_vertices, len(mesh.edges()), mesh.n_faces
    chi = euler_characteristic(mesh)
    m, P = subdivide_midpoint(mesh)
    assert m.n_vertices == V + E
    assert m.n_faces == 4 * F
    assert len(m.edges()) == 2 * E + 3 * F
    assert euler_characteristic(m) == chi
    np.testing.assert_allclose(P.val.sum(axis=1), 1.0, atol=1e-15)
    assert np.all((P.val > 0) | (P.val == 0)) and P.val.max() <= 1.0


def test_prolong_identity_and_midpoint():
    m, P0 = subdivide_levels(icosahedron(), 0)
    x = np.random.default_rng(1).normal(size=(12, 3))
    np.testing.assert_array_equal(prolong(P0, x), x)
    seg = TriMesh(np.array([[0, 0, 0], [2, 0, 0], [0, 2, 0.0]]), [[0, 1, 2]])
    sm, P = subdivide_midpoint(seg)
    np.testing.assert_array_equal(sm.vertices[3], [1, 0, 0])  # edge (0,1) comes first
    with pytest.raises(ValueError):
        prolong(P, x)


def test_prolong_rigid_commutes():
    mesh, P = subdivide_levels(icosahedron(), 2)
    low = icosahedron().vertices
    rng = np.random.default_rng(2)
    for _ in range(50):
        R = random_rotation(rng)
        t = rng.normal(size=3)
        np.testing.assert_allclose(prolong(P, low @ R.T + t), prolong(P, low) @ R.T + t, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-3, 3), st.floats(-3, 3))
def test_prolong_linear(seed, a, b):
    _, P = subdivide_levels(icosahedron(), 2)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, 12, 3))
    np.testing.assert_allclose(prolong(P, a * x + b * y), a * prolong(P, x) + b * prolong(P, y), atol=1e-12)


def test_prolongation_reproduces_high_positions():
    low = icosahedron()
    high, P = subdivide_levels(low, 3)
    assert np.abs(prolong(P, low.vertices) - high.vertices).max() <= 1e-12
    assert P.idx.shape[1] <= 8


def test_face_frame_examples():
    A = face_frame([0, 0, 0], [1, 0, 0], [0, 1, 0])
    np.testing.assert_allclose(A, np.eye(3), atol=1e-15)
    A2 = face_frame([0, 0, 0], [2, 0, 0], [0, 2, 0])
    np.testing.assert_allclose(A2, 2 * np.eye(3), atol=1e-15)
    with pytest.raises(DegenerateFaceError, match="face 0"):
        face_frame([0, 0, 0], [1, 0, 0], [2, 0, 0])


def test_face_frame_orthogonal_random():
    rng = np.random.default_rng(3)
    v = rng.normal(size=(100, 3, 3))
    A = face_frames(v[:, 0], v[:, 1], v[:, 2])
    area = 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)
    sig2 = 2 * area
    AtA = np.einsum("fji,fjk->fik", A, A)
    np.testing.assert_allclose(AtA, sig2[:, None, None] * np.eye(3), atol=1e-9)
    assert np.all(np.linalg.det(A) > 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_face_frame_equivariance(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(3, 3))
    R, t = random_rotation(rng), rng.normal(size=3)
    A = face_frame(*v)
    B = face_frame(*(v @ R.T + t))
    np.testing.assert_allclose(B, R @ A, atol=1e-9)


def test_laplacian_tetrahedron():
    m = tetrahedron()
    lap = laplacian_vectors(m, m.vertices)
    for i in range(4):
        others = np.delete(m.vertices, i, axis=0).mean(axis=0)
        np.testing.assert_allclose(lap[i], others - m.vertices[i], atol=1e-15)


def test_laplacian_fixed_point_and_isolated():
    # a flat strip where every vertex is the mean of its neighbours is hard to build;
    # a constant field is the simplest fixed point
    m = icosahedron()
    np.testing.assert_allclose(laplacian_vectors(m, np.ones((12, 3))), 0.0, atol=1e-15)
    iso = TriMesh(np.vstack([m.vertices, [[5.0, 5, 5]]]), m.faces)
    assert np.all(laplacian_vectors(iso, iso.vertices)[12] == 0)
    with pytest.raises(ValueError):
        laplacian_vectors(m, np.ones((11, 3)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_laplacian_rigid_equivariance(seed):
    rng = np.random.default_rng(seed)
    m = subdivide_midpoint(icosahedron())[0]
    x = m.vertices + 0.1 * rng.normal(size=m.vertices.shape)
    R, t = random_rotation(rng), rng.normal(size=3)
    np.testing.assert_allclose(laplacian_vectors(m, x @ R.T + t), laplacian_vectors(m, x) @ R.T, atol=1e-12)


def test_obj_round_trip(tmp_path):
    m = subdivide_midpoint(icosahedron())[0]
    write_obj(m, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    np.testing.assert_array_equal(back.vertices, m.vertices)
    np.testing.assert_array_equal(back.faces, m.faces)

import numpy as np
import pytest

from gomrecon.diff import ParamStore, Tensor, gradcheck, ops, sample_indices
from gomrecon.geometry import icosahedron, neighbor_table, prolong, tetrahedron
from gomrecon.gom import default_encoding, init_canonical
from gomrecon.reconstruct import (ModelConfig, SourceSet, StepContext, compute_feedback_features, encode_images,
                                  feedback_step, fuse_multi_source, gaussian_head, image_pyramid, init_params,
                                  initial_state, mesh_aggregate, reconstruct, render_sources, render_state,
                                  sample_pixel_aligned, update_vertices, vertex_residual)
from gomrecon.rig import Pose, Rig, matrix_to_quat
from gomrecon.splat import SMOOTH_CONFIG, orbit_camera
from gomrecon.trainkit import loss_total, make_synthetic_subject, random_pose, sample_scene

from .conftest import random_rotation


def ico_rig() -> Rig:
    mesh = icosahedron()
    # two joints split along y so poses are not rigid
    idx = np.tile([0, 1], (12, 1))
    w1 = np.clip(0.5 + mesh.vertices[:, 1], 0.05, 0.95)
    val = np.column_stack([1 - w1, w1])
    return Rig([-1, 0], np.tile([1.0, 0, 0, 0], (2, 1)), np.zeros((2, 3)), mesh, idx, val)


def toy_sources(rng, n=2, res=8, rig=None):
    rig = rig or ico_rig()
    images, masks, poses, cams = [], [], [], []
    for i in range(n):
        cam = orbit_camera(2 * np.pi * i / n + 0.3, 0.2, 4.0, [0, 0, 0], focal=1.6 * res, width=res, height=res)
        R = random_rotation(rng)
        pose = Pose(matrix_to_quat(np.stack([np.eye(3), R])), np.zeros((2, 3)))
        images.append(rng.uniform(0, 1, (res, res, 3)))
        masks.append((rng.uniform(size=(res, res)) > 0.5).astype(float))
        poses.append(pose)
        cams.append(cam)
    return SourceSet(images, masks, poses, cams)


def random_params(cfg: ModelConfig, rng, scale=0.3) -> ParamStore:
    store = init_params(cfg, np.float64)
    for k in store.names():
        store.params[k] = store.params[k] + scale * rng.normal(size=store.params[k].shape) / np.sqrt(
            max(store.params[k].shape[0], 1))
    return store


# --- encoder and sampler ---

def test_constant_image_pyramid_constant():
    py = image_pyramid(np.full((16, 12, 3), 0.3)).data
    np.testing.assert_allclose(py, 0.3, atol=1e-12)
    assert py.shape == (16, 12, 12)


def test_zero_lift_gives_zero_features():
    p = {"enc.W": Tensor(np.zeros((12, 32))), "enc.b": Tensor(np.zeros(32))}
    f = encode_images([np.random.default_rng(0).uniform(size=(8, 8, 3))], p)[0]
    assert f.shape == (8, 8, 32) and np.all(f.data == 0)


def test_encoder_gradcheck():
    rng = np.random.default_rng(1)
    img, W, b = rng.uniform(size=(8, 8, 3)), rng.normal(size=(12, 5)), rng.normal(size=5)
    w = rng.normal(size=(8, 8, 5))

    def f(im, Wt, bt):
        return (encode_images([im], {"enc.W": Wt, "enc.b": bt})[0] * Tensor(w)).sum()

    assert gradcheck(f, [img, W, b]) < 1e-3


def test_sampler_examples():
    fm = np.arange(4 * 5 * 2, dtype=float).reshape(4, 5, 2)
    out = sample_pixel_aligned(fm, np.array([[2.0, 1.0], [2.5, 1.0], [-3.0, 10.0]])).data
    np.testing.assert_array_equal(out[0], fm[1, 2])
    np.testing.assert_allclose(out[1], 0.5 * (fm[1, 2] + fm[1, 3]))
    np.testing.assert_array_equal(out[2], fm[3, 0])


def test_sampler_gradcheck():
    rng = np.random.default_rng(2)
    ys, xs = np.mgrid[0:6, 0:7]
    fm = np.stack([np.sin(0.7 * xs + 0.3 * ys), np.cos(0.5 * ys - 0.2 * xs)], axis=-1)
    uv = rng.uniform(0.6, 5.4, (10, 2)) + 0.013
    w = rng.normal(size=(10, 2))
    assert gradcheck(lambda f_, u: (sample_pixel_aligned(f_, u) * Tensor(w)).sum(), [fm, uv],
                     branch_aware=True) < 1e-3


# --- attention ---

def fuse_params(rng, C):
    p = {f"fuse.{m}{r}": Tensor(rng.normal(size=(C, C)) / np.sqrt(C)) for r in "12" for m in "qkv"}
    p.update({f"fuse.vb{r}": Tensor(rng.normal(size=C) * 0.1) for r in "12"})
    return p


def test_fusion_single_and_duplicated_source():
    rng = np.random.default_rng(3)
    C = 6
    p = fuse_params(rng, C)
    x = rng.normal(size=(4, 1, C))
    e = rng.normal(size=(4, C))
    one = fuse_multi_source(x, e, p).data
    # a single slot: round one is x + x V1 + b1 and round two its value map
    h = x[:, 0] + x[:, 0] @ p["fuse.v1"].data + p["fuse.vb1"].data
    np.testing.assert_allclose(one, h @ p["fuse.v2"].data + p["fuse.vb2"].data, atol=1e-12)
    two = fuse_multi_source(np.concatenate([x, x], axis=1), e, p).data
    np.testing.assert_allclose(two, one, atol=1e-12)
    with pytest.raises(ValueError):
        fuse_multi_source(rng.normal(size=(4, 2, C + 1)), e, p)


def test_fusion_permutation_invariant():
    rng = np.random.default_rng(4)
    p = fuse_params(rng, 8)
    x, e = rng.normal(size=(5, 4, 8)), rng.normal(size=(5, 8))
    base = fuse_multi_source(x, e, p).data
    for _ in range(5):
        perm = rng.permutation(4)
        np.testing.assert_allclose(fuse_multi_source(x[:, perm], e, p).data, base, atol=1e-6)


def test_fusion_gradcheck():
    rng = np.random.default_rng(5)
    p = fuse_params(rng, 4)
    names = sorted(p)
    x, e = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4))
    w = rng.normal(size=(3, 4))

    def f(xt, et, *ps):
        return (fuse_multi_source(xt, et, dict(zip(names, ps))) * Tensor(w)).sum()

    assert gradcheck(f, [x, e] + [p[n].data for n in names]) < 1e-3


def mesh_params(rng, C, zero_out=False):
    p = {}
    for r in range(2):
        for m in ("q", "k", "v", "out"):
            p[f"mesh{r}.{m}"] = Tensor(np.zeros((C, C)) if zero_out and m in ("v", "out")
                                       else rng.normal(size=(C, C)) / np.sqrt(C))
        p[f"mesh{r}.pos"] = Tensor(rng.normal(size=(3, C)))
    return p


def test_mesh_aggregate_residual_and_isolated():
    rng = np.random.default_rng(6)
    mesh = tetrahedron()
    nbr, mask = neighbor_table(mesh)
    x = rng.normal(size=(4, 5))
    out = mesh_aggregate(x, mesh.vertices, nbr, mask, mesh_params(rng, 5, zero_out=True)).data
    np.testing.assert_array_equal(out, x)
    # an isolated vertex attends only to itself
    nbr1, mask1 = np.zeros((1, 1), int), np.ones((1, 1), bool)
    p = mesh_params(rng, 5)
    x1 = rng.normal(size=(1, 5))
    h = x1
    for r in range(2):
        v = h @ p[f"mesh{r}.v"].data
        msg = np.where(v > 0, v, 0.01 * v)
        h = h + msg @ p[f"mesh{r}.out"].data
    np.testing.assert_allclose(mesh_aggregate(x1, np.zeros((1, 3)), nbr1, mask1, p).data, h, atol=1e-12)
    with pytest.raises(ValueError):
        mesh_aggregate(rng.normal(size=(3, 5)), mesh.vertices, nbr, mask, p)


def test_mesh_aggregate_gradcheck():
    rng = np.random.default_rng(7)
    mesh = tetrahedron()
    nbr, mask = neighbor_table(mesh)
    p = mesh_params(rng, 4)
    names = sorted(p)
    x, w = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))

    def f(xt, pos, *ps):
        return (mesh_aggregate(xt, pos, nbr, mask, dict(zip(names, ps))) * Tensor(w)).sum()

    assert gradcheck(f, [x, mesh.vertices] + [p[n].data for n in names]) < 1e-3


# --- heads and steps ---

def test_update_vertices_zero_head_and_bound():
    rng = np.random.default_rng(8)
    cfg = ModelConfig(12, n_sources=2, width=8, hidden=8)
    store = init_params(cfg, np.float64)
    params = {k: Tensor(v) for k, v in store.params.items()}
    state = initial_state(init_canonical(ico_rig(), 0), params)
    fb = Tensor(rng.normal(size=(12, 8)))
    np.testing.assert_array_equal(update_vertices(state, fb, params).data, state.low.data)
    # a head emitting (0.1, 0, 0) everywhere is limited by the bound
    params["vhead.b2"] = Tensor(np.array([0.1, 0.0, 0.0]))
    d = vertex_residual(fb, params, 0.05).data
    np.testing.assert_allclose(d[:, 0], 0.05 * np.tanh(2.0), rtol=1e-12)
    np.testing.assert_allclose(d[:, 1:], 0.0)
    with pytest.raises(ValueError):
        update_vertices(state, Tensor(np.zeros((11, 8))), params)


def test_vertex_head_gradcheck():
    rng = np.random.default_rng(9)
    cfg = ModelConfig(12, n_sources=2, width=4, hidden=5)
    store = random_params(cfg, rng)
    names = [n for n in store.names() if n.startswith("vhead")]
    fb, w = rng.normal(size=(12, 4)), rng.normal(size=(12, 3))

    def f(x, *ps):
        return (vertex_residual(x, dict(zip(names, ps)), 0.05) * Tensor(w)).sum()

    assert gradcheck(f, [fb] + [store[n] for n in names]) < 1e-3


def test_identity_at_initialization():
    rng = np.random.default_rng(10)
    rig = ico_rig()
    src = toy_sources(rng)
    store = init_params(ModelConfig(12, n_sources=2, width=8, hidden=8))
    tpl = init_canonical(rig, 1)
    for T in (1, 2, 3):
        res = reconstruct(src, rig, T, store, k=1)
        assert res.gom.low_vertices.tobytes() == tpl.low_vertices.tobytes()
        assert res.gom.gaussians.packed().tobytes() == tpl.gaussians.packed().tobytes()
        assert len(res.step_ms) == T


def test_zero_gaussian_head_decodes_to_defaults():
    rng = np.random.default_rng(11)
    cfg = ModelConfig(12, n_sources=2, width=8, hidden=8)
    params = {k: Tensor(v) for k, v in init_params(cfg, np.float64).params.items()}
    src = toy_sources(rng)
    state = initial_state(init_canonical(ico_rig(), 0), params)
    fb = Tensor(rng.normal(size=(12, 8)))
    out = gaussian_head(state, state.low, fb, src, params).data
    assert np.all(out == 0)
    dup = SourceSet(src.images[:1] * 2, src.masks[:1] * 2, src.poses[:1] * 2, src.cameras[:1] * 2)
    assert gaussian_head(state, state.low, fb, dup, params).shape == out.shape


def test_coupling_after_every_step_and_multi_pose():
    rng = np.random.default_rng(12)
    rig = ico_rig()
    src = toy_sources(rng, n=2, res=12)
    assert not np.allclose(src.poses[0].rotations, src.poses[1].rotations)
    store = random_params(ModelConfig(12, n_sources=2, width=8, hidden=8), rng)
    res = reconstruct(src, rig, 3, store, k=2, keep_states=True)
    for st in res.states:
        g = st.gom
        assert np.abs(g.high_mesh.vertices - prolong(g.prolongation, g.low_vertices)).max() <= 1e-12
        assert np.all(np.isfinite(g.gaussians.packed()))
    assert not np.allclose(res.gom.low_vertices, rig.template.vertices)


def test_reconstruct_deterministic_and_rejects_T0():
    rng = np.random.default_rng(13)
    rig = ico_rig()
    src = toy_sources(rng)
    store = random_params(ModelConfig(12, n_sources=2, width=8, hidden=8), rng)
    a = reconstruct(src, rig, 2, store, k=1).gom
    b = reconstruct(src, rig, 2, store, k=1).gom
    assert a.low_vertices.tobytes() == b.low_vertices.tobytes()
    assert a.gaussians.packed().tobytes() == b.gaussians.packed().tobytes()
    with pytest.raises(ValueError):
        reconstruct(src, rig, 0, store)


def test_vertex_update_source_permutation_invariant():
    rng = np.random.default_rng(14)
    rig = ico_rig()
    src = toy_sources(rng, n=3, res=10)
    cfg = ModelConfig(12, n_sources=3, width=8, hidden=8)
    params = {k: Tensor(v) for k, v in random_params(cfg, rng).params.items()}
    state = initial_state(init_canonical(rig, 0), params)
    fb = compute_feedback_features(state, src, params).data
    perm = [2, 0, 1]
    psrc = SourceSet(*[[getattr(src, f)[i] for i in perm] for f in ("images", "masks", "poses", "cameras")])
    np.testing.assert_allclose(compute_feedback_features(state, psrc, params).data, fb, atol=1e-9)


def test_fixed_point_features_halves_equal():
    # when the renders equal the sources the two sampled halves coincide
    rng = np.random.default_rng(15)
    rig = ico_rig()
    cfg = ModelConfig(12, n_sources=2, width=8, hidden=8)
    params = {k: Tensor(v) for k, v in random_params(cfg, rng).params.items()}
    state = initial_state(init_canonical(rig, 0), params)
    src0 = toy_sources(rng)
    renders = render_sources(state, src0)
    src = SourceSet([r.data[..., :3] for r in renders], [r.data[..., 3] for r in renders], src0.poses,
                    src0.cameras)
    ctx = StepContext(encode_images(src.images, params), renders)
    preds = encode_images([r[..., :3] for r in renders], params)
    for n in range(2):
        np.testing.assert_array_equal(ctx.src_features[n].data, preds[n].data)
    assert np.all(np.isfinite(compute_feedback_features(state, src, params, ctx).data))


def end_to_end_loss(src, rig, target, names, T=2, k=0):
    def f(*ps):
        params = dict(zip(names, ps))
        state = initial_state(init_canonical(rig, k), params)
        ctx = StepContext(encode_images(src.images, params))
        terms = []
        for _ in range(T):
            ctx.renders = render_sources(state, src, SMOOTH_CONFIG)
            state = feedback_step(state, src, params, 0.05, ctx)
            out = render_state(state.low, state.enc, state.template, target[2], target[3], SMOOTH_CONFIG)
            terms.append(loss_total(out[..., :3], out[..., 3], target[0], target[1], state.template.low_mesh,
                                    state.low))
        return ops.stack(terms).mean()
    return f


def test_end_to_end_gradcheck_toy():
    rng = np.random.default_rng(16)
    rig = ico_rig()
    src = toy_sources(rng, n=2, res=8)
    cam = orbit_camera(1.0, 0.1, 4.0, [0, 0, 0], focal=12.8, width=8, height=8)
    target = (rng.uniform(size=(8, 8, 3)), (rng.uniform(size=(8, 8)) > 0.5) * 1.0, src.poses[0], cam)
    store = random_params(ModelConfig(12, n_sources=2, width=4, hidden=4), rng, scale=0.2)
    names = store.names()
    xs = [store[n] for n in names]
    idx = sample_indices([x.shape for x in xs], 2, seed=1)
    err, rep = gradcheck(end_to_end_loss(src, rig, target, names), xs, indices=idx, branch_aware=True,
                         return_report=True)
    assert rep["checked"] >= 40
    assert err < 1e-3


def test_model_expects_matching_template():
    store = init_params(ModelConfig(10, n_sources=2, width=4, hidden=4))
    with pytest.raises(ValueError, match="low-res vertices"):
        initial_state(init_canonical(ico_rig(), 0), {k: Tensor(v) for k, v in store.params.items()})


def test_synthetic_scene_runs_through_model():
    subject = make_synthetic_subject(3)
    scene = sample_scene(3, np.random.default_rng(0), n_sources=2, resolution=16)
    cfg = ModelConfig(subject.rig.template.n_vertices, n_sources=2, width=8, hidden=8)
    res = reconstruct(scene.source_set(), scene.rig, 1, init_params(cfg), k=0)
    assert res.gom.violations() == []
    assert random_pose(subject.rig, np.random.default_rng(1)).n_joints == 9
    np.testing.assert_allclose(res.gom.gaussians.packed(), np.broadcast_to(default_encoding(),
                                                                            res.gom.gaussians.packed().shape))

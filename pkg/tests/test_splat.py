import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gomrecon.diff import Tensor, gradcheck, sample_indices
from gomrecon.splat import (DEFAULT_CONFIG, CameraModel, RasterConfig, active_signature, orbit_camera,
                            project_gaussian, rasterize, rasterize_backward, rasterize_op, rasterize_oracle)

from .conftest import random_rotation


def axis_camera(size=128, f=100.0) -> CameraModel:
    K = np.array([[f, 0, size / 2], [0, f, size / 2], [0, 0, 1.0]])
    return CameraModel(K, np.eye(4), size, size)


def random_scene(rng, n, spread=0.6, depth=(2.0, 4.0)):
    mu = np.column_stack([rng.uniform(-spread, spread, n), rng.uniform(-spread, spread, n),
                          rng.uniform(*depth, n)])
    sigma = np.empty((n, 3, 3))
    for i in range(n):
        R = random_rotation(rng)
        s = rng.uniform(0.005, 0.08, 3)
        sigma[i] = R @ np.diag(s * s) @ R.T
    return mu, sigma, rng.uniform(0, 1, (n, 3)), rng.uniform(0.05, 0.99, n)


def test_projection_examples():
    cam = axis_camera(128)
    s = project_gaussian([0, 0, 2], 1e-4 * np.eye(3), [1, 0, 0], 0.5, cam)
    np.testing.assert_allclose(s.mean2d, [64, 64])
    np.testing.assert_allclose(s.cov2d, (0.25 + 0.3) * np.eye(2), atol=1e-12)
    assert project_gaussian([0, 0, -1], np.eye(3), [1, 0, 0], 0.5, cam) is None


def test_cov2d_eigen_floor_and_closed_form():
    rng = np.random.default_rng(0)
    cam = orbit_camera(0.3, 0.1, 3.0, [0, 0, 0], focal=80.0, width=64, height=64)
    for _ in range(20):
        mu = rng.normal(size=3) * 0.3
        R = random_rotation(rng)
        S = R @ np.diag(rng.uniform(0.01, 0.2, 3) ** 2) @ R.T
        sp = project_gaussian(mu, S, [0, 0, 0], 0.5, cam)
        assert np.linalg.eigvalsh(sp.cov2d).min() >= 0.3 - 1e-12
        m = cam.R @ mu + cam.t
        J = np.array([[cam.fx / m[2], 0, -cam.fx * m[0] / m[2] ** 2],
                      [0, cam.fy / m[2], -cam.fy * m[1] / m[2] ** 2]])
        np.testing.assert_allclose(sp.cov2d, J @ cam.R @ S @ cam.R.T @ J.T + 0.3 * np.eye(2), atol=1e-10)


def test_empty_scene():
    cam = axis_camera(32)
    z = (np.zeros((0, 3)), np.zeros((0, 3, 3)), np.zeros((0, 3)), np.zeros(0))
    for out in (rasterize(z, cam), rasterize_oracle(z, cam)):
        assert np.all(out.image == 0) and np.all(out.alpha == 0)


def test_single_gaussian_center():
    cam = axis_camera(128)
    out = rasterize(([[0, 0, 2.0]], [1e-3 * np.eye(3)], [[1, 0, 0]], [0.8]), cam)
    np.testing.assert_allclose(out.alpha[64, 64], 0.8, atol=1e-12)
    np.testing.assert_allclose(out.image[64, 64], [0.8, 0, 0], atol=1e-12)


def test_two_coincident_gaussians_capped():
    cam = axis_camera(128)
    g = ([[0, 0, 2.0], [0, 0, 2.5]], [1e-3 * np.eye(3)] * 2, [[1, 0, 0], [0, 0, 1]], [0.5, 1.0])
    out = rasterize(g, cam)
    np.testing.assert_allclose(out.image[64, 64], [0.5, 0, 0.5 * 0.999], atol=1e-12)


def test_singular_and_culled_counted():
    cam = axis_camera(32)
    g = ([[0, 0, 2.0], [0, 0, -1.0]], [np.zeros((3, 3)), np.eye(3)], [[1, 1, 1]] * 2, [0.5, 0.5])
    out = rasterize(g, cam, RasterConfig(low_pass=0.0))
    assert out.n_singular == 1 and out.n_culled == 1
    assert np.all(out.alpha == 0)


def early_exit_bound(out, cfg=DEFAULT_CONFIG):
    # a pixel that stopped early may still miss at most its remaining transmittance
    T = 1.0 - out.alpha
    return np.where(T < cfg.t_min, T, 0.0)


@pytest.mark.parametrize("seed", range(6))
def test_oracle_equivalence(seed):
    rng = np.random.default_rng(seed)
    g = random_scene(rng, int(rng.integers(1, 300)))
    cam = axis_camera(64, f=60.0)
    fast, ref = rasterize(g, cam), rasterize_oracle(g, cam)
    bound = 1e-5 + early_exit_bound(fast)
    assert np.all(np.abs(fast.image - ref.image) <= bound[..., None])
    assert np.all(np.abs(fast.alpha - ref.alpha) <= bound)
    # without the early exit the two agree to rounding
    cfg = RasterConfig(t_min=0.0)
    np.testing.assert_allclose(rasterize(g, cam, cfg).image, rasterize_oracle(g, cam, cfg).image, atol=1e-12)


def test_tile_and_worker_invariance():
    rng = np.random.default_rng(7)
    g = random_scene(rng, 200)
    cam = axis_camera(96, f=80.0)
    base = rasterize(g, cam, workers=1)
    for workers in (2, 4, 8):
        out = rasterize(g, cam, workers=workers)
        assert out.image.tobytes() == base.image.tobytes()
        assert out.alpha.tobytes() == base.alpha.tobytes()
    for tile in (8, 32):
        out = rasterize(g, cam, RasterConfig(tile=tile))
        assert out.image.tobytes() == base.image.tobytes()


def test_permutation_invariance():
    rng = np.random.default_rng(8)
    g = random_scene(rng, 80)
    cam = axis_camera(48, f=40.0)
    perm = rng.permutation(80)
    a = rasterize(g, cam)
    b = rasterize(tuple(x[perm] for x in g), cam)
    assert a.image.tobytes() == b.image.tobytes()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_energy_bound(seed):
    rng = np.random.default_rng(seed)
    g = random_scene(rng, 40)
    out = rasterize(g, axis_camera(32, f=30.0))
    assert out.alpha.min() >= 0 and out.alpha.max() <= 1
    assert np.all(out.image <= out.alpha[..., None] * g[2].max() + 1e-12)


def test_golden_projection_pixels():
    # frozen from the brute-force oracle on a fixed 3-Gaussian scene
    g = ([[0, 0, 2.0], [0.1, -0.05, 2.5], [-0.1, 0.05, 3.0]],
         [np.diag([0.01, 0.004, 0.002]), 0.003 * np.eye(3), np.diag([0.002, 0.02, 0.01])],
         [[1, 0, 0], [0, 1, 0], [0, 0, 1]], [0.7, 0.6, 0.9])
    cam = axis_camera(32, f=30.0)
    ref = rasterize_oracle(g, cam)
    out = rasterize(g, cam)
    np.testing.assert_allclose(out.image, ref.image, atol=1e-12)
    assert out.alpha[16, 16] == pytest.approx(ref.alpha[16, 16], abs=1e-15)
    assert 0.7 < ref.alpha[16, 16] < 1.0


def _loss_fn(cam, cfg, w_img, w_a):
    def f(mu, sig, col, op):
        out = rasterize_op(mu, sig, col, op, cam, cfg)
        return (out[..., :3] * Tensor(w_img)).sum() + (out[..., 3] * Tensor(w_a)).sum()
    return f


def test_color_gradient_single_gaussian():
    cam = axis_camera(16, f=20.0)
    g = [np.array([[0, 0, 2.0]]), np.array([0.01 * np.eye(3)]), np.array([[0.2, 0.5, 0.7]]), np.array([0.6])]
    d_mu, d_sig, d_col, d_op = rasterize_backward(tuple(g), cam, np.ones((16, 16, 3)), np.zeros((16, 16)))
    out = rasterize(tuple(g), cam)
    np.testing.assert_allclose(d_col[0], out.alpha.sum(), rtol=1e-12)


def test_occluded_opacity_gradient_zero():
    cam = axis_camera(16, f=20.0)
    g = ([[0, 0, 2.0], [0, 0, 3.0]], [np.eye(3), 1e-3 * np.eye(3)], [[1, 0, 0], [0, 0, 1]], [1.0, 0.7])
    *_, d_op = rasterize_backward(g, cam, np.ones((16, 16, 3)), np.ones((16, 16)))
    assert abs(d_op[1]) < 1e-2 * abs(d_op[0]) + 1e-9


@pytest.mark.parametrize("seed", range(3))
def test_rasterizer_gradcheck(seed):
    rng = np.random.default_rng(100 + seed)
    cam = axis_camera(32, f=30.0)
    g = list(random_scene(rng, 20, spread=0.5))
    g[1] = g[1] * 4
    w_img, w_a = rng.normal(size=(32, 32, 3)), rng.normal(size=(32, 32))
    cfg = DEFAULT_CONFIG
    idx = sample_indices([x.shape for x in g], 12, seed)
    err, rep = gradcheck(_loss_fn(cam, cfg, w_img, w_a), g, h=1e-4, indices=idx,
                         signature=lambda *a: active_signature(*a, cam, cfg), return_report=True)
    assert rep["checked"] >= 30
    assert err < 1e-3

import numpy as np
import pytest

from conftest import random_rotation
from splatfuse.core import (
    SH_C0,
    SH_C1,
    Camera,
    Gaussian3D,
    GaussianSet,
    RigidTransform,
    build_covariance,
    project_point,
    project_points,
    quat_multiply,
    quat_normalize,
    quat_to_rotmat,
    sh_eval,
    unproject,
    world_from_local_pointmap,
)
from splatfuse.errors import BehindCamera


def _random_pose(rng):
    return RigidTransform(random_rotation(rng), rng.standard_normal(3))


# ---- rigid transforms -------------------------------------------------------


def test_transform_inverse_compose(rng):
    for _ in range(20):
        T = _random_pose(rng)
        I = T.inverse().compose(T)
        assert np.allclose(I.rotation, np.eye(3), atol=1e-9)
        assert np.allclose(I.translation, 0, atol=1e-9)


def test_transform_matrix_matches_apply(rng):
    T = _random_pose(rng)
    p = rng.standard_normal((5, 3))
    hom = np.c_[p, np.ones(5)] @ T.matrix().T
    assert np.allclose(hom[:, :3], T.apply(p), atol=1e-12)


def test_rotation_must_be_orthonormal():
    with pytest.raises(ValueError):
        Camera.centered(100, 64, 64, RigidTransform(np.diag([1.0, 1.0, 1.1]), np.zeros(3)))


# ---- covariance ----------------------------------------------------------


def test_covariance_identity():
    assert np.allclose(build_covariance([1, 0, 0, 0], [0, 0, 0]), np.eye(3))


def test_covariance_axis_scaling():
    assert np.allclose(build_covariance([1, 0, 0, 0], [np.log(2), 0, 0]), np.diag([4.0, 1, 1]))


def test_covariance_matches_matrix_product_oracle(rng):
    q = quat_normalize(rng.standard_normal((1000, 4)))
    ls = rng.uniform(-3, 1, (1000, 3))
    cov = build_covariance(q, ls)
    assert np.abs(cov - np.swapaxes(cov, -1, -2)).max() < 1e-12
    for i in range(0, 1000, 97):
        w, x, y, z = q[i]
        R = np.array(
            [
                [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
                [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
                [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
            ]
        )
        S = np.diag(np.exp(ls[i]))
        assert np.allclose(cov[i], R @ S @ S.T @ R.T, atol=1e-12)
    eig = np.linalg.eigvalsh(cov)
    assert np.all(eig.min(-1) >= np.exp(2 * ls.min(-1)) - 1e-9)


def test_quat_multiply_matches_rotation_composition(rng):
    a = quat_normalize(rng.standard_normal(4))
    b = quat_normalize(rng.standard_normal(4))
    assert np.allclose(quat_to_rotmat(quat_multiply(a, b)), quat_to_rotmat(a) @ quat_to_rotmat(b), atol=1e-12)


def test_gaussian_quat_is_normalized(rng):
    g = Gaussian3D(np.zeros(3), rng.standard_normal(4) * 3, np.zeros(3), 0.0, np.zeros((4, 3)))
    assert abs(np.linalg.norm(g.quat) - 1) < 1e-9


# ---- spherical harmonics ---------------------------------------------------


def test_sh_zero_is_gray(rng):
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    assert np.allclose(sh_eval(np.zeros((4, 3)), d), 0.5)


def test_sh_dc_is_view_independent(rng):
    sh = rng.standard_normal((1, 3))
    a, b = np.array([0, 0, 1.0]), np.array([1.0, 0, 0])
    assert np.array_equal(sh_eval(sh, a), sh_eval(sh, b))
    assert np.allclose(sh_eval(sh, a), np.maximum(SH_C0 * sh[0] + 0.5, 0))


def test_sh_degree1_polynomial_oracle(rng):
    for _ in range(50):
        sh = rng.standard_normal((4, 3)) * 0.3
        d = rng.standard_normal(3)
        x, y, z = d / np.linalg.norm(d)
        basis = np.array([SH_C0, -SH_C1 * y, SH_C1 * z, -SH_C1 * x])
        expect = np.maximum(basis @ sh + 0.5, 0)
        assert np.abs(sh_eval(sh, np.array([x, y, z])) - expect).max() < 1e-12


# ---- projection ------------------------------------------------------------


def _cam100():
    return Camera(100.0, 100.0, 50.0, 50.0, RigidTransform.identity(), 100, 100)


def test_project_optical_axis():
    assert np.allclose(project_point([0, 0, 1], _cam100()), (50, 50, 1))


def test_project_linear_in_x():
    assert np.allclose(project_point([0.1, 0, 1], _cam100()), (60, 50, 1))


def test_project_behind_camera():
    with pytest.raises(BehindCamera):
        project_point([0, 0, -1], _cam100())
    with pytest.raises(BehindCamera):
        project_point([0, 0, 0], _cam100())


def test_project_matches_homogeneous_oracle(rng):
    for _ in range(50):
        pose = _random_pose(rng)
        cam = Camera(120.0, 110.0, 40.0, 30.0, pose, 80, 60)
        p = pose.inverse().apply(np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 4)]))
        P = cam.K @ pose.matrix()[:3]
        h = P @ np.r_[p, 1.0]
        u, v, z = project_point(p, cam)
        assert abs(u - h[0] / h[2]) < 1e-10 and abs(v - h[1] / h[2]) < 1e-10 and abs(z - h[2]) < 1e-10


def test_project_unproject_roundtrip(rng):
    cam = Camera(90.0, 90.0, 32.0, 24.0, _random_pose(rng), 64, 48)
    for _ in range(100):
        u, v, d = rng.uniform(0, 64), rng.uniform(0, 48), rng.uniform(0.1, 10)
        uu, vv, dd = project_point(unproject(u, v, d, cam), cam)
        assert max(abs(uu - u), abs(vv - v), abs(dd - d)) < 1e-9


def test_project_points_nan_behind(rng):
    u, v, z = project_points(np.array([[0, 0, 1.0], [0, 0, -1.0]]), _cam100())
    assert np.isfinite(u[0]) and np.isnan(u[1]) and z[1] == -1


# ---- pointmaps -------------------------------------------------------------


def test_world_from_local_identity(rng):
    pm = rng.standard_normal((4, 5, 3))
    assert np.array_equal(world_from_local_pointmap(pm, RigidTransform.identity()), pm)


def test_world_from_local_translation(rng):
    pm = rng.standard_normal((4, 5, 3))
    t = np.array([0.3, -1.0, 2.0])
    # camera-from-world translation -t places the camera at +t in the world
    out = world_from_local_pointmap(pm, RigidTransform(np.eye(3), -t))
    assert np.allclose(out, pm + t, atol=1e-12)


def test_world_from_local_roundtrip(rng):
    pose = _random_pose(rng)
    pm = rng.standard_normal((6, 7, 3))
    back = pose.apply(world_from_local_pointmap(pm, pose))
    assert np.abs(back - pm).max() < 1e-9


# ---- gaussian sets ---------------------------------------------------------


def test_gaussian_set_subset_concat(rng):
    n = 6
    g = GaussianSet(rng.standard_normal((n, 3)), rng.standard_normal((n, 4)), rng.standard_normal((n, 3)), rng.standard_normal(n), rng.standard_normal((n, 4, 3)))
    assert np.allclose(np.linalg.norm(g.quat, axis=1), 1)
    both = GaussianSet.concat([g.subset(slice(0, 2)), g.subset(slice(2, None))])
    assert np.array_equal(both.mu, g.mu) and np.array_equal(both.sh, g.sh)
    assert g.sh_degree == 1
    assert len(GaussianSet.empty(2)) == 0 and GaussianSet.empty(2).sh.shape == (0, 9, 3)

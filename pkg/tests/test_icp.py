"""ICP registration tests."""

import numpy as np
import pytest

from dextraj.geometry import DegenerateCloudError, RigidPose, icp_rigid, random_quat
from dextraj.geometry.rigid import quat_from_axis_angle


def _cloud(rng, n=40):
    # anisotropic support avoids rotational near-symmetries
    return rng.normal(size=(n, 3)) * np.array([1.0, 0.55, 0.3])


def test_recovers_known_transform():
    rng = np.random.default_rng(0)
    src = _cloud(rng)
    true = RigidPose(quat_from_axis_angle([0.1, 0.2, -0.15]), np.array([0.3, -0.2, 0.5]))
    res = icp_rigid(src, true.apply(src))
    np.testing.assert_allclose(res.transform.quat, true.quat, atol=1e-9)
    np.testing.assert_allclose(res.transform.trans, true.trans, atol=1e-9)
    assert res.residual < 1e-12


def test_residual_non_increasing():
    rng = np.random.default_rng(1)
    src = _cloud(rng, 60)
    true = RigidPose(random_quat(rng), rng.normal(size=3) * 0.2)
    dst = true.apply(src) + rng.normal(size=src.shape) * 0.01
    res = icp_rigid(src, dst)
    h = np.array(res.residual_history)
    assert np.all(np.diff(h) <= 1e-12)


def test_collinear_cloud_rejected():
    src = np.array([[0.0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]])
    dst = np.random.default_rng(2).normal(size=(4, 3))
    with pytest.raises(DegenerateCloudError):
        icp_rigid(src, dst)
    with pytest.raises(DegenerateCloudError):
        icp_rigid(dst, src)


def test_planar_cloud_rejected():
    rng = np.random.default_rng(3)
    src = rng.normal(size=(20, 3))
    src[:, 2] = 0.0
    with pytest.raises(DegenerateCloudError):
        icp_rigid(src, rng.normal(size=(20, 3)))


def test_shape_validation():
    with pytest.raises(ValueError):
        icp_rigid(np.zeros((3, 2)), np.zeros((3, 3)))
    with pytest.raises(ValueError):
        icp_rigid(np.zeros((2, 3)), np.zeros((3, 3)))


def test_moderate_rotation_batch():
    rng = np.random.default_rng(4)
    for _ in range(20):
        src = _cloud(rng, 50)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, np.deg2rad(60.0))
        true = RigidPose(quat_from_axis_angle(axis * angle), rng.normal(size=3) * 0.3)
        res = icp_rigid(src, true.apply(src), max_iters=200)
        err_t = np.linalg.norm(res.transform.trans - true.trans)
        err_q = np.linalg.norm(res.transform.quat - true.quat)
        assert err_t < 1e-6 and err_q < 1e-6

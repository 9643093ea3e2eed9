import math

import numpy as np
import pytest

from skysim.rotations import (exp_rotvec, hat, is_rotation, log_rotvec,
                              matrix_from_quaternion_wxyz, orthonormalize,
                              quaternion_wxyz, rotation_x, rotation_y,
                              rotation_z, vee)


def test_hat_vee_inverse():
    v = np.array([0.3, -1.2, 2.0])
    assert np.array_equal(vee(hat(v)), v)
    assert hat(v) @ np.array([1.0, 2.0, 3.0]) == pytest.approx(
        np.cross(v, [1.0, 2.0, 3.0]))


def test_exp_log_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(100):
        axis = rng.normal(0.0, 1.0, 3)
        axis /= np.linalg.norm(axis)
        v = axis * rng.uniform(1e-4, math.pi - 1e-4)  # canonical domain
        r = exp_rotvec(v)
        assert is_rotation(r)
        assert log_rotvec(r) == pytest.approx(v, abs=1e-9)


def test_log_near_pi():
    v = np.array([1.0, 2.0, -0.5])
    v = v / np.linalg.norm(v) * (math.pi - 1e-9)
    r = exp_rotvec(v)
    back = log_rotvec(r)
    assert exp_rotvec(back) == pytest.approx(r, abs=1e-6)


def test_orthonormalize_projects_back():
    rng = np.random.default_rng(2)
    r = exp_rotvec(rng.normal(0.0, 1.0, 3))
    noisy = r + rng.normal(0.0, 1e-6, (3, 3))
    fixed = orthonormalize(noisy)
    assert is_rotation(fixed, tol=1e-12)
    assert fixed == pytest.approx(r, abs=1e-5)


def test_quaternion_round_trip():
    rng = np.random.default_rng(3)
    for _ in range(100):
        r = exp_rotvec(rng.normal(0.0, 1.2, 3))
        q = quaternion_wxyz(r)
        assert np.linalg.norm(q) == pytest.approx(1.0, abs=1e-12)
        assert q[0] >= 0.0
        assert matrix_from_quaternion_wxyz(q) == pytest.approx(r, abs=1e-12)


def test_axis_rotations():
    assert rotation_x(math.pi / 2) @ np.array([0.0, 1.0, 0.0]) == \
        pytest.approx([0.0, 0.0, 1.0])
    assert rotation_y(math.pi / 2) @ np.array([0.0, 0.0, 1.0]) == \
        pytest.approx([1.0, 0.0, 0.0])
    assert rotation_z(math.pi / 2) @ np.array([1.0, 0.0, 0.0]) == \
        pytest.approx([0.0, 1.0, 0.0])


def test_is_rotation_rejects():
    assert not is_rotation(np.eye(3) * 2.0)
    assert not is_rotation(np.diag([1.0, 1.0, -1.0]))  # reflection
    assert not is_rotation(np.full((3, 3), np.nan))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vla4d import errors
from vla4d.geometry import (
    CameraModel,
    DepthGrid,
    MVBENCH_PRESETS,
    backproject,
    backproject_pixel,
    euler_to_matrix,
    matrix_to_euler,
    patch_mean_depth,
    project,
    ring_cameras,
    ring_viewpose,
    rot_y,
    rot_z,
    wrap_angle,
)
from vla4d.tensorio import Tensor

angle = st.floats(-math.pi, math.pi, allow_nan=False)


def rodrigues(axis, a):
    """Independent axis-angle oracle."""
    k = np.asarray(axis, dtype=float)
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(a) * K + (1 - math.cos(a)) * K @ K


def cam_identity(f=1.0, c=0.0, T=(0, 0, 0)):
    return CameraModel(f, f, c, c, np.eye(3), T)


def test_euler_zero_and_quarter_turn():
    assert np.array_equal(euler_to_matrix([0, 0, 0]), np.eye(3))
    R = euler_to_matrix([0, 0, math.pi / 2])
    assert np.allclose(R @ [1, 0, 0], [0, 1, 0], atol=1e-15)


@settings(max_examples=200, deadline=None)
@given(angle, st.floats(-math.pi / 2, math.pi / 2), angle)
def test_euler_matches_axis_angle_oracle(tx, ty, tz):
    want = rodrigues([0, 0, 1], tz) @ rodrigues([0, 1, 0], ty) @ rodrigues([1, 0, 0], tx)
    R = euler_to_matrix([tx, ty, tz])
    assert np.max(np.abs(R - want)) < 1e-12
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12


def test_matrix_to_euler_examples():
    assert np.array_equal(matrix_to_euler(np.eye(3)), [0.0, 0.0, 0.0])
    th = matrix_to_euler(euler_to_matrix([0.1, 0.2, 0.3]))
    assert np.max(np.abs(th - [0.1, 0.2, 0.3])) < 1e-12


def test_gimbal_lock_ry_quarter():
    th = matrix_to_euler(rot_y(math.pi / 2))
    assert th[1] == math.pi / 2 and th[0] == 0.0
    assert abs(th[2]) < 1e-15


@pytest.mark.parametrize("sign", [1, -1])
@pytest.mark.parametrize("tx, tz", [(0.3, 0.0), (0.0, 1.2), (0.7, -2.0), (-3.0, 3.0)])
def test_gimbal_lock_canonical_form(sign, tx, tz):
    R = euler_to_matrix([tx, sign * math.pi / 2, tz])
    th = matrix_to_euler(R)
    assert th[0] == 0.0
    assert th[1] == sign * math.pi / 2
    assert -math.pi < th[2] <= math.pi
    assert np.max(np.abs(euler_to_matrix(th) - R)) < 1e-12


def test_atan2_minus_pi_maps_to_pi():
    th = matrix_to_euler(rot_z(math.pi))
    assert th[2] == math.pi


def test_not_a_rotation():
    with pytest.raises(errors.NotARotation):
        matrix_to_euler(np.diag([1.0, 1.0, 1.1]))
    with pytest.raises(errors.NotARotation):
        matrix_to_euler(np.diag([1.0, 1.0, -1.0]))


@pytest.mark.parametrize("raw, want", [(-6.0, 2 * math.pi - 6.0), (math.pi, math.pi), (-math.pi, math.pi), (7.0, 7.0 - 2 * math.pi)])
def test_wrap_angle(raw, want):
    assert wrap_angle(raw) == pytest.approx(want, abs=1e-15)


def test_project_examples():
    cam = cam_identity()
    assert project([0, 0, 2], cam) == (0.0, 0.0)
    assert project([1, 1, 2], cam) == (0.5, 0.5)
    with pytest.raises(errors.BehindCamera):
        project([0, 0, 0], cam)
    with pytest.raises(errors.BehindCamera):
        project([0, 0, -1], cam)


def test_backproject_examples():
    d = DepthGrid([[2.0]], [[1.0]], 1)
    pg = backproject(d, cam_identity())
    assert pg.points[:, 0, 0].tolist() == [1.0, 1.0, 2.0]
    cam = CameraModel(2, 2, 1, 1, np.eye(3), [1, 1, 1])
    assert np.allclose(backproject_pixel(3, 2, 4, cam), [5, 3, 5], atol=0)


def test_backproject_patch_center_grid():
    # 3x2 grid at patch 2: cell (row 1, col 2) has center (5, 3)
    depth = np.full((2, 3), 4.0)
    d = DepthGrid(depth, np.ones((2, 3)), 2)
    cam = CameraModel(2, 2, 1, 1, np.eye(3), [1, 1, 1])
    pg = backproject(d, cam)
    want = backproject_pixel(5.0, 3.0, 4.0, cam)
    assert np.array_equal(pg.points[:, 1, 2], want)


def test_backproject_mask_rule():
    d = DepthGrid([[2.0, 2.0]], [[0.05, 0.1]], 1)
    pg = backproject(d, cam_identity())
    assert pg.mask.tolist() == [[False, True]]
    assert pg.points[:, 0, 0].tolist() == [0.0, 0.0, 0.0]
    with pytest.raises(errors.DataError):
        backproject(d, cam_identity(), 1.5)


def test_patch_mean_depth_examples():
    g = patch_mean_depth(Tensor((2, 2), "f64", [4, 4, 4, 4]), 2)
    assert g.depth.tolist() == [[4.0]] and g.valid_frac.tolist() == [[1.0]]
    g = patch_mean_depth(np.array([[4.0, 0], [0, 0]]), 2)
    assert g.depth.tolist() == [[4.0]] and g.valid_frac.tolist() == [[0.25]]
    g = patch_mean_depth(np.zeros((2, 2)), 1)
    assert g.depth.tolist() == [[0, 0], [0, 0]] and g.valid_frac.max() == 0
    with pytest.raises(errors.IndivisibleShape):
        patch_mean_depth(np.ones((3, 2)), 2)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.1, 10), st.sampled_from([1, 2, 7, 14]), st.integers(1, 3), st.integers(1, 3))
def test_constant_depth_map(c, patch, r, k):
    g = patch_mean_depth(np.full((r * patch, k * patch), c), patch)
    assert np.all(g.depth == c) and np.all(g.valid_frac == 1.0)


def test_patch_mean_matches_loop_oracle():
    rng = np.random.default_rng(0)
    full = rng.uniform(0.5, 3.0, (28, 42)) * (rng.uniform(size=(28, 42)) > 0.4)
    g = patch_mean_depth(full, 14)
    for i in range(2):
        for j in range(3):
            block = full[i * 14 : (i + 1) * 14, j * 14 : (j + 1) * 14]
            vals = [v for v in block.ravel() if v > 0]
            assert g.valid_frac[i, j] == len(vals) / 196
            assert g.depth[i, j] == pytest.approx(sum(vals) / len(vals), rel=1e-14)


def test_ring_viewpose_example():
    R, T = ring_viewpose(0.0, 1.0, 0.0, (0, 0, 0))
    assert np.array_equal(T, [1.0, 0.0, 0.0])
    assert np.allclose(R[:, 2], [-1, 0, 0], atol=0)
    # right-handed camera basis
    assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)


def test_ring_viewpose_straight_down_fallback():
    R, T = ring_viewpose(0.0, 0.0, 2.0, (0, 0, 0))
    assert np.allclose(R[:, 2], [0, 0, -1])
    assert np.allclose(R[:, 0], [1, 0, 0])
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
    with pytest.raises(errors.DegeneratePose):
        ring_viewpose(0.0, 0.0, 0.0)


@settings(max_examples=200, deadline=None)
@given(
    angle,
    st.floats(0.2, 5),
    st.floats(-2, 2),
    st.tuples(*[st.floats(-1, 1)] * 3),
)
def test_ring_pose_properties(a, radius, height, target):
    R, T = ring_viewpose(a, radius, height, target)
    assert np.max(np.abs(R.T @ R - np.eye(3))) < 1e-12
    cam = CameraModel(300, 300, 160, 120, R, T)
    u, v = project(target, cam)
    assert abs(u - 160) < 1e-9 and abs(v - 120) < 1e-9
    # image "down" points toward world -z for a camera that is not looking straight down
    assert R[2, 1] <= 1e-12


def test_presets():
    assert MVBENCH_PRESETS["mvbench-train"] == (0.0, 60.0, 120.0, 270.0, 300.0, 330.0)
    assert MVBENCH_PRESETS["mvbench-test15"] == (15.0, 45.0, 75.0, 105.0)
    assert MVBENCH_PRESETS["mvbench-test30"] == (30.0, 90.0)
    cams = ring_cameras(MVBENCH_PRESETS["mvbench-test30"], 1.0, 0.5, (0, 0, 0), 224, 224, 112, 112)
    assert len(cams) == 2


def test_camera_validation():
    with pytest.raises(errors.DataError):
        CameraModel(0, 1, 0, 0)
    with pytest.raises(errors.DataError):
        CameraModel(1, 1, 0, 0, np.diag([1, 1, -1.0]))
    cam = CameraModel(2, 3, 4, 5)
    assert cam.K.tolist() == [[2, 0, 4], [0, 3, 5], [0, 0, 1]]
    with pytest.raises(ValueError):
        cam.R[0, 0] = 5.0

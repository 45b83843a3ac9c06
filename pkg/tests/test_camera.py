import math

import numpy as np
import pytest

from turnbake.camera import (CameraPose, compute_fov, load_trajectory, look_at_pose,
                             orbit_position, orbit_trajectory, project,
                             project_points, save_trajectory, unproject)
from turnbake.errors import InputError


def test_orbit_position_first_frame():
    assert np.allclose(orbit_position(2.0, 1.0, 4, 0), [2.0, 0.0, 1.0], atol=0)


def test_orbit_position_quarter_turn():
    assert np.allclose(orbit_position(2.0, 1.0, 4, 1), [0.0, 2.0, 1.0], atol=1e-12)


def test_orbit_closes_loop():
    assert np.allclose(orbit_position(2.0, 1.0, 4, 4), orbit_position(2.0, 1.0, 4, 0),
                       atol=1e-9)


def test_orbit_trajectory_basics():
    traj = orbit_trajectory(2.0, 1.0, 8, 64, 64)
    assert len(traj) == 8
    assert traj.poses[0].position == pytest.approx([2.0, 0.0, 1.0])
    for pose in traj.poses:
        # forward axis points at the origin
        direction = -pose.position / np.linalg.norm(pose.position)
        assert np.allclose(pose.forward, direction, atol=1e-6)
        # positions lie on the orbit circle
        assert math.hypot(pose.position[0], pose.position[1]) == pytest.approx(2.0)
        assert pose.position[2] == pytest.approx(1.0)
        assert pose.fov_y == traj.fov_y and pose.resolution == (64, 64)


def test_orbit_rejects_degenerate():
    with pytest.raises(InputError):
        orbit_trajectory(0.0, 1.0, 8, 64, 64)
    with pytest.raises(InputError):
        orbit_trajectory(2.0, 0.0, 1, 64, 64)


def test_compute_fov_values():
    assert compute_fov(3.0, 1.0, 1.1) == pytest.approx(2.0 * math.atan(1.1 / 3.0), abs=1e-12)
    assert compute_fov(2.0, 1.0, 1.0) == pytest.approx(2.0 * math.atan(0.5), abs=1e-12)


def test_compute_fov_camera_inside_sphere():
    with pytest.raises(InputError):
        compute_fov(1.0, 1.0, 1.1)


def test_look_at_degenerate_on_up_axis():
    with pytest.raises(InputError):
        look_at_pose((0.0, 0.0, 3.0), 0.8, 64, 64, 1.0, 5.0)


def test_pose_validation():
    with pytest.raises(InputError):
        CameraPose(np.zeros(3), np.eye(3) * 2.0, 0.8, 64, 64, 0.5, 3.0)
    with pytest.raises(InputError):
        CameraPose(np.zeros(3), np.eye(3), 0.8, 64, 64, 3.0, 0.5)


def test_project_origin_hits_image_center():
    traj = orbit_trajectory(2.0, 1.0, 6, 128, 96)
    for pose in traj.poses:
        pixel, depth, in_front = project(pose, [0.0, 0.0, 0.0])
        assert in_front
        assert pixel == pytest.approx([64.0, 48.0], abs=1e-9)
        assert depth == pytest.approx(math.sqrt(5.0), abs=1e-12)


def test_project_point_at_camera_flagged():
    pose = look_at_pose((0.0, -2.0, 0.0), 0.8, 64, 64, 0.5, 4.0)
    _, _, in_front = project(pose, pose.position)
    assert not in_front


def test_project_right_offset_matches_pinhole():
    pose = look_at_pose((0.0, -2.0, 0.0), 0.9, 80, 64, 0.5, 4.0)
    d, forward_dist = 0.3, 1.5
    right = pose.rotation[0]
    point = pose.position + pose.forward * forward_dist + right * d
    pixel, depth, _ = project(pose, point)
    expected_offset = (d / forward_dist) * (64 / 2.0) / math.tan(0.9 / 2.0)
    assert depth == pytest.approx(forward_dist, abs=1e-12)
    assert pixel[0] - 40.0 == pytest.approx(expected_offset, abs=1e-9)
    assert pixel[1] == pytest.approx(32.0, abs=1e-9)


def test_project_unproject_roundtrip():
    rng = np.random.default_rng(3)
    traj = orbit_trajectory(2.5, 0.7, 5, 96, 96)
    pts = rng.uniform(-0.9, 0.9, size=(50, 3))
    for pose in traj.poses:
        xy, z = project_points(pose, pts)
        for p, (px, py), depth in zip(pts, xy, z):
            assert depth > 0
            back = unproject(pose, (px, py), depth)
            assert np.allclose(back, p, atol=1e-4)


def test_pose_rotation_orthonormal_right_handed():
    traj = orbit_trajectory(3.0, -0.4, 7, 64, 64)
    for pose in traj.poses:
        r = pose.rotation
        assert np.allclose(r @ r.T, np.eye(3), atol=1e-9)
        assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-9)


def test_trajectory_save_load_roundtrip(tmp_path):
    traj = orbit_trajectory(2.2, 0.8, 6, 128, 128)
    path = tmp_path / "trajectory.json"
    save_trajectory(path, traj)
    loaded = load_trajectory(path)
    assert loaded.frame_count == 6
    assert loaded.r == traj.r and loaded.z == traj.z
    assert loaded.fov_y == traj.fov_y
    assert (loaded.near, loaded.far) == (traj.near, traj.far)
    for a, b in zip(traj.poses, loaded.poses):
        assert np.array_equal(a.position, b.position)
        assert np.array_equal(a.rotation, b.rotation)


def test_trajectory_save_deterministic(tmp_path):
    traj = orbit_trajectory(1.9, 0.3, 5, 64, 64)
    save_trajectory(tmp_path / "a.json", traj)
    save_trajectory(tmp_path / "b.json", traj)
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()


def test_load_trajectory_malformed(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{}")
    with pytest.raises(InputError):
        load_trajectory(p)

"""Orbital camera trajectories with look-at extrinsics and pinhole intrinsics.

Conventions: world up is +z; the orbit circle lies in the xy-plane at height
z.  Camera space follows the computer-vision layout (x right, y down,
z forward), so depth is the positive distance along the forward axis and the
world-to-camera matrix rows are (right, down, forward).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InputError

_WORLD_UP = np.array([0.0, 0.0, 1.0])


@dataclass(frozen=True)
class CameraPose:
    position: np.ndarray  # (3,) world units
    rotation: np.ndarray  # (3, 3) world-to-camera, rows = right / down / forward
    fov_y: float          # vertical field of view, radians
    width: int
    height: int
    near: float
    far: float

    def __post_init__(self):
        p = np.asarray(self.position, np.float64).reshape(3)
        r = np.asarray(self.rotation, np.float64).reshape(3, 3)
        p.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "rotation", r)
        if not (0.0 < self.fov_y < math.pi):
            raise InputError(f"fov_y {self.fov_y} outside (0, pi)")
        if not (0.0 < self.near < self.far):
            raise InputError(f"invalid clip range near={self.near} far={self.far}")
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise InputError("camera rotation is not orthonormal")
        if np.linalg.det(r) < 0:
            raise InputError("camera rotation is not right-handed")

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.width, self.height)

    @property
    def forward(self) -> np.ndarray:
        return self.rotation[2]

    def focal_px(self) -> float:
        """Focal length in pixels (square pixels, vertical FOV defines it)."""
        return (self.height / 2.0) / math.tan(self.fov_y / 2.0)

    def world_to_camera_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = -self.rotation @ self.position
        return m


def look_at_pose(eye, fov_y: float, width: int, height: int,
                 near: float, far: float, target=(0.0, 0.0, 0.0)) -> CameraPose:
    """Pose at `eye` looking at `target` with world up +z."""
    eye = np.asarray(eye, np.float64).reshape(3)
    target = np.asarray(target, np.float64).reshape(3)
    fwd = target - eye
    n = np.linalg.norm(fwd)
    if n < 1e-12:
        raise InputError("camera position coincides with the look-at target")
    fwd = fwd / n
    right = np.cross(fwd, _WORLD_UP)
    rn = np.linalg.norm(right)
    if rn < 1e-9:
        raise InputError("degenerate look-at: view direction parallel to world up")
    right = right / rn
    up = np.cross(right, fwd)
    rot = np.stack([right, -up, fwd])
    return CameraPose(eye, rot, fov_y, width, height, near, far)


def compute_fov(camera_distance: float, bound_radius: float, margin: float = 1.1) -> float:
    """Vertical FOV framing a sphere of `bound_radius` (inflated by `margin`)."""
    if bound_radius <= 0 or margin <= 0:
        raise InputError("bound_radius and margin must be positive")
    if camera_distance <= bound_radius * margin:
        raise InputError(
            f"camera distance {camera_distance} inside inflated bounding sphere "
            f"{bound_radius * margin}")
    return 2.0 * math.atan(bound_radius * margin / camera_distance)


def orbit_position(r: float, z: float, frame_count: int, t: int) -> np.ndarray:
    """Orbit sample: (r cos(2*pi*t/T), r sin(2*pi*t/T), z)."""
    angle = 2.0 * math.pi * t / frame_count
    return np.array([r * math.cos(angle), r * math.sin(angle), z])


@dataclass(frozen=True)
class OrbitTrajectory:
    r: float
    z: float
    frame_count: int
    fov_y: float
    width: int
    height: int
    near: float
    far: float
    poses: tuple[CameraPose, ...]

    def __len__(self) -> int:
        return self.frame_count

    def __iter__(self):
        return iter(self.poses)


def orbit_trajectory(r: float, z: float, frame_count: int, width: int, height: int,
                     fov_y: float | None = None, *, bound_radius: float = 1.0,
                     margin: float = 1.1, near: float | None = None,
                     far: float | None = None) -> OrbitTrajectory:
    """Circular orbit of `frame_count` poses, all looking at the origin.

    fov_y=None picks the FOV that frames the bounding sphere with `margin`.
    near/far default to distance -/+ 1.5 * bound_radius (near clamped positive).
    """
    if r <= 0:
        raise InputError("orbit radius must be positive (camera on the z-axis is degenerate)")
    if frame_count < 2:
        raise InputError("frame count must be at least 2")
    if width < 1 or height < 1:
        raise InputError("resolution must be positive")
    distance = math.hypot(r, z)
    if fov_y is None:
        fov_y = compute_fov(distance, bound_radius, margin)
    if near is None:
        near = max(distance - 1.5 * bound_radius, 1e-3)
    if far is None:
        far = distance + 1.5 * bound_radius
    poses = tuple(
        look_at_pose(orbit_position(r, z, frame_count, t), fov_y, width, height, near, far)
        for t in range(frame_count))
    return OrbitTrajectory(r, z, frame_count, fov_y, width, height, near, far, poses)


@dataclass(frozen=True)
class TrajectoryParams:
    """Deferred orbit description, used by bake plans and the CLI."""
    r: float = 2.2
    z: float = 0.8
    frame_count: int = 61
    width: int = 512
    height: int = 512
    fov_y: float | None = None
    margin: float = 1.1

    def build(self) -> OrbitTrajectory:
        return orbit_trajectory(self.r, self.z, self.frame_count, self.width,
                                self.height, self.fov_y, margin=self.margin)

    def with_updates(self, **kw) -> "TrajectoryParams":
        return replace(self, **kw)


# ---------------------------------------------------------------------------
# projection


def project_points(pose: CameraPose, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Perspective-project (N, 3) world points.

    Returns continuous pixel coordinates (N, 2) and camera-space depth (N,).
    Points at or behind the camera plane have non-positive depth; their pixel
    coordinates are meaningless and must be gated on depth by the caller.
    """
    pts = np.asarray(points, np.float64).reshape(-1, 3)
    cam = (pts - pose.position) @ pose.rotation.T
    z = cam[:, 2]
    fl = pose.focal_px()
    with np.errstate(divide="ignore", invalid="ignore"):
        x = pose.width / 2.0 + fl * cam[:, 0] / z
        y = pose.height / 2.0 + fl * cam[:, 1] / z
    return np.stack([x, y], axis=1), z


def project(pose: CameraPose, point) -> tuple[np.ndarray, float, bool]:
    """Project one world point -> (pixel, depth, in_front)."""
    xy, z = project_points(pose, np.asarray(point, np.float64).reshape(1, 3))
    depth = float(z[0])
    return xy[0], depth, depth > 1e-12


def unproject(pose: CameraPose, pixel, depth: float) -> np.ndarray:
    """Inverse of project for a pixel coordinate and camera-space depth."""
    fl = pose.focal_px()
    px, py = float(pixel[0]), float(pixel[1])
    cam = np.array([(px - pose.width / 2.0) * depth / fl,
                    (py - pose.height / 2.0) * depth / fl,
                    depth])
    return pose.rotation.T @ cam + pose.position


# ---------------------------------------------------------------------------
# trajectory files


def save_trajectory(path, traj: OrbitTrajectory) -> None:
    """Write the trajectory as JSON with per-frame world-to-camera matrices."""
    doc = {
        "r": traj.r,
        "z": traj.z,
        "frame_count": traj.frame_count,
        "fov_y": traj.fov_y,
        "resolution": [traj.width, traj.height],
        "near": traj.near,
        "far": traj.far,
        "frames": [
            {
                "position": [float(v) for v in p.position],
                "world_to_camera": [[float(v) for v in row] for row in p.world_to_camera_matrix()],
            }
            for p in traj.poses
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_trajectory(path) -> OrbitTrajectory:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read trajectory file {path}: {e}") from e
    try:
        width, height = doc["resolution"]
        poses = []
        for frame in doc["frames"]:
            m = np.asarray(frame["world_to_camera"], np.float64).reshape(4, 4)
            poses.append(CameraPose(
                np.asarray(frame["position"], np.float64), m[:3, :3],
                doc["fov_y"], int(width), int(height), doc["near"], doc["far"]))
        return OrbitTrajectory(doc["r"], doc["z"], doc["frame_count"], doc["fov_y"],
                               int(width), int(height), doc["near"], doc["far"],
                               tuple(poses))
    except (KeyError, TypeError, ValueError) as e:
        raise InputError(f"malformed trajectory file {path}: {e}") from e

"""Render the geometric conditioning videos for a mesh.

Builds a mug, normalizes it into the unit sphere, sweeps a 24-frame camera
orbit around it, and writes the aligned per-frame rasters (normal, world
position, depth, coverage mask) plus the trajectory file that external
generators consume.
"""
from pathlib import Path

from turnbake.camera import orbit_trajectory, save_trajectory
from turnbake.mesh import normalize_mesh
from turnbake.primitives import make_mug
from turnbake.render import render_turntable, write_frames

out = Path(__file__).parent / "out" / "condition"
out.mkdir(parents=True, exist_ok=True)

mesh = normalize_mesh(make_mug())
print(f"mug: {mesh.num_faces} triangles, bounding radius {mesh.bounding_radius():.3f}")

# auto FOV frames the unit bounding sphere with a 10% margin
trajectory = orbit_trajectory(r=2.4, z=0.7, frame_count=24, width=256, height=256)
print(f"orbit: r=2.4 z=0.7, fov={trajectory.fov_y:.3f} rad, "
      f"near/far=({trajectory.near:.2f}, {trajectory.far:.2f})")

frames = render_turntable(mesh, None, trajectory)
write_frames(out, frames, trajectory.near, trajectory.far)
save_trajectory(out / "trajectory.json", trajectory)

covered = [int(gb.mask.sum()) for gb in frames]
print(f"wrote {len(frames)} frames per kind under {out}")
print(f"coverage per frame: min {min(covered)} px, max {max(covered)} px")

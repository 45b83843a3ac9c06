"""Score a baked atlas against its reference with PSNR/SSIM reports.

Bakes a short sphere turntable, then renders both the baked and the
reference atlas along the same orbit and compares them frame by frame.
"""
from pathlib import Path

from turnbake.bake import bake_video
from turnbake.camera import orbit_trajectory
from turnbake.metrics import evaluate_bake, save_report
from turnbake.primitives import checker_atlas, make_uv_sphere
from turnbake.render import render_turntable

out = Path(__file__).parent / "out" / "evaluate"
out.mkdir(parents=True, exist_ok=True)

mesh = make_uv_sphere(24, 48)
reference = checker_atlas(256, 8)
trajectory = orbit_trajectory(r=2.4, z=0.6, frame_count=12, width=192, height=192)

frames = render_turntable(mesh, reference, trajectory, 0.0)
baked = bake_video(mesh, frames, trajectory, 256)

report, cov = evaluate_bake(mesh, baked, reference, trajectory)
save_report(report, cov, out)
print((out / "report.txt").read_text())
print(f"report files under {out}")

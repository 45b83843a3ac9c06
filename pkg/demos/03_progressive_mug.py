"""Progressive refinement on a self-occluded shape.

A mug's inner-handle region and caps are poorly seen from a single orbit, so
one pass leaves the atlas incomplete.  The refinement loop scores candidate
base rotations by how many under-confident texels they expose, re-renders
conditioning (including the partial texture and its inpaint mask), asks the
provider for a new turntable video, and fuses the bake into the master atlas.
"""
from pathlib import Path

from turnbake.camera import TrajectoryParams
from turnbake.fusion import BakePlan, PlanStep, progressive_texture, rotation_grid
from turnbake.generator import OracleGenerator
from turnbake.mesh import Rotation, normalize_mesh
from turnbake.primitives import checker_atlas, make_mug

out = Path(__file__).parent / "out" / "progressive"

mug = normalize_mesh(make_mug())
params = TrajectoryParams(r=2.5, z=0.5, frame_count=16, width=192, height=192)
plan = BakePlan(steps=(PlanStep(Rotation.identity(), params),),
                coverage_target=0.98, confidence_threshold=0.05, max_iterations=3)

# the oracle stands in for the video generator: it re-renders a reference
# checker texture, so every response is perfectly 3D-consistent
oracle = OracleGenerator(mug, checker_atlas(256, 8))

atlas, report = progressive_texture(mug, oracle, plan, workdir=out,
                                    atlas_size=256, candidates=rotation_grid())
print(report.table())
print(f"final coverage {report.covered_fraction:.4f} "
      f"after {len(report.history)} iterations; artifacts under {out}")

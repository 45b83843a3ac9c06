"""Progressive texture refinement.

Each pass reorients the object (the camera orbit never changes), renders
conditioning frames including the current partial texture and its inpaint
mask, asks the appearance provider for a new turntable video, bakes it, and
merges it into the master atlas by confidence weighting.  Rotations are
scored by how many under-confident texels they expose to the orbit.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .bake import (TextureAtlas, TexelTable, bake_video, build_texel_table,
                   build_visibility, build_visibility_from_triangles,
                   _points_unobstructed, angle_weight, save_atlas)
from .camera import TrajectoryParams, project_points, save_trajectory
from .errors import InputError, MissingUVsError, ProviderError
from .mesh import Rotation, TriangleMesh, rotate_mesh
from .render import render_color, read_color_frames, write_frames

MIN_SCORE_ANGLE_WEIGHT = 0.05


def coverage(atlas: TextureAtlas, uv_occupancy: np.ndarray, threshold: float) -> float:
    """Fraction of UV-occupied texels whose confidence reaches `threshold`."""
    occ = np.asarray(uv_occupancy, bool)
    if occ.shape != atlas.confidence.shape:
        raise InputError("occupancy grid and atlas resolutions disagree")
    total = int(occ.sum())
    if total == 0:
        raise InputError("UV occupancy is empty: nothing to cover")
    return float((atlas.confidence[occ] >= threshold).sum() / total)


def fuse(a: TextureAtlas, b: TextureAtlas) -> TextureAtlas:
    """Confidence-weighted merge: summed confidence, weighted-mean color.

    Commutative and associative up to roundoff; the zero-confidence atlas is
    the identity and fuse(x, x) keeps the color bit-exact.
    """
    if a.resolution != b.resolution:
        raise InputError(f"atlas resolution mismatch: {a.resolution} vs {b.resolution}")
    conf = a.confidence + b.confidence
    wa = np.divide(a.confidence, conf, out=np.zeros_like(conf), where=conf > 0)
    wb = np.divide(b.confidence, conf, out=np.zeros_like(conf), where=conf > 0)
    color = a.color * wa[..., None] + b.color * wb[..., None]
    return TextureAtlas(color, conf)


def score_rotation(mesh: TriangleMesh, atlas: TextureAtlas, rot: Rotation,
                   trajectory, threshold: float, *,
                   table: TexelTable | None = None,
                   min_angle_weight: float = MIN_SCORE_ANGLE_WEIGHT) -> int:
    """Count under-confident texels the rotated mesh exposes to the orbit.

    A texel counts when, in at least one trajectory frame, it projects inside
    the image, passes the ray-traced visibility test, and its angle incentive
    exceeds `min_angle_weight`.
    """
    if not mesh.has_uvs:
        raise MissingUVsError("rotation scoring requires a UV parameterization")
    poses = list(getattr(trajectory, "poses", trajectory))
    if table is None:
        table = build_texel_table(mesh, atlas.resolution)
    if atlas.confidence.shape != table.covered.shape:
        raise InputError("atlas resolution does not match the texel table")
    under = atlas.confidence[table.rows, table.cols] < threshold
    if not under.any():
        return 0
    m = rot.as_matrix()
    pts = table.points[under] @ m.T
    nrm = table.normals[under] @ m.T
    index = build_visibility_from_triangles(mesh.face_positions() @ m.T)

    seen = np.zeros(pts.shape[0], bool)
    for pose in poses:
        xy, z = project_points(pose, pts)
        view = pose.position - pts
        dist = np.linalg.norm(view, axis=1, keepdims=True)
        lam = angle_weight(nrm, view / np.maximum(dist, 1e-300))
        ok = ((z > 0) & (lam > min_angle_weight) & ~seen
              & (xy[:, 0] >= 0.0) & (xy[:, 0] < pose.width)
              & (xy[:, 1] >= 0.0) & (xy[:, 1] < pose.height))
        if not ok.any():
            continue
        vis = _points_unobstructed(index, pose.position, pts[ok])
        seen[np.flatnonzero(ok)[vis]] = True
    return int(seen.sum())


def select_base_rotation(mesh: TriangleMesh, atlas: TextureAtlas,
                         candidates, trajectory, threshold: float, *,
                         table: TexelTable | None = None) -> Rotation:
    """Candidate with the highest score; ties keep the lowest candidate index."""
    candidates = list(candidates)
    if not candidates:
        raise InputError("empty rotation candidate list")
    if table is None:
        table = build_texel_table(mesh, atlas.resolution)
    best, best_score = candidates[0], -1
    for cand in candidates:
        score = score_rotation(mesh, atlas, cand, trajectory, threshold, table=table)
        if score > best_score:
            best, best_score = cand, score
    return best


def rotation_grid(yaw_count: int = 8, pitches_deg=(0.0, -45.0, 45.0)) -> list[Rotation]:
    """Default candidate set: `yaw_count` yaws x the given pitches, yaw-major."""
    out = []
    for yi in range(yaw_count):
        yaw = 2.0 * math.pi * yi / yaw_count
        for pi, pitch_deg in enumerate(pitches_deg):
            out.append(Rotation.from_yaw_pitch(yaw, math.radians(pitch_deg),
                                               yaw_index=yi, pitch_index=pi))
    return out


# ---------------------------------------------------------------------------
# bake plans and coverage reports


@dataclass(frozen=True)
class PlanStep:
    """One refinement pass: a fixed rotation (None = pick greedily) and its orbit."""

    rotation: Rotation | None
    trajectory: TrajectoryParams


@dataclass(frozen=True)
class BakePlan:
    steps: tuple[PlanStep, ...] = ()
    coverage_target: float = 0.98
    confidence_threshold: float = 0.05
    max_iterations: int = 4

    def __post_init__(self):
        object.__setattr__(self, "steps", tuple(self.steps))
        if not (0.0 < self.coverage_target <= 1.0):
            raise InputError(f"coverage_target {self.coverage_target} outside (0, 1]")
        if self.max_iterations < 1:
            raise InputError("max_iterations must be at least 1")

    def step(self, iteration: int) -> PlanStep:
        """Plan step for a 0-based iteration, extending greedily past the list."""
        if iteration < len(self.steps):
            return self.steps[iteration]
        trajectory = self.steps[-1].trajectory if self.steps else TrajectoryParams()
        return PlanStep(None, trajectory)


@dataclass(frozen=True)
class CoverageReport:
    history: tuple[float, ...]
    rotations: tuple[Rotation, ...] = ()

    @property
    def covered_fraction(self) -> float:
        return self.history[-1] if self.history else 0.0

    def table(self) -> str:
        lines = ["iteration  coverage  rotation (w, x, y, z)"]
        for i, cov in enumerate(self.history):
            quat = "-"
            if i < len(self.rotations):
                quat = "(" + ", ".join(f"{v:+.4f}" for v in self.rotations[i].quat) + ")"
            lines.append(f"{i + 1:9d}  {cov:8.4f}  {quat}")
        return "\n".join(lines)


def _rotation_to_doc(rot: Rotation | None):
    if rot is None:
        return None
    return {"quat_wxyz": [float(v) for v in rot.quat],
            "yaw_index": rot.yaw_index, "pitch_index": rot.pitch_index}


def _rotation_from_doc(doc) -> Rotation | None:
    if doc is None:
        return None
    return Rotation(np.asarray(doc["quat_wxyz"], np.float64),
                    yaw_index=doc.get("yaw_index"), pitch_index=doc.get("pitch_index"))


def save_plan(path, plan: BakePlan) -> None:
    doc = {
        "coverage_target": plan.coverage_target,
        "confidence_threshold": plan.confidence_threshold,
        "max_iterations": plan.max_iterations,
        "steps": [
            {"rotation": _rotation_to_doc(s.rotation),
             "trajectory": {"r": s.trajectory.r, "z": s.trajectory.z,
                            "frame_count": s.trajectory.frame_count,
                            "width": s.trajectory.width, "height": s.trajectory.height,
                            "fov_y": s.trajectory.fov_y, "margin": s.trajectory.margin}}
            for s in plan.steps
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_plan(path) -> BakePlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        steps = tuple(
            PlanStep(_rotation_from_doc(s["rotation"]), TrajectoryParams(**s["trajectory"]))
            for s in doc.get("steps", []))
        return BakePlan(steps, doc["coverage_target"], doc["confidence_threshold"],
                        doc["max_iterations"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as e:
        raise InputError(f"malformed plan file {path}: {e}") from e


def save_coverage_report(path, report: CoverageReport) -> None:
    doc = {
        "covered_fraction": report.covered_fraction,
        "history": list(report.history),
        "rotations": [_rotation_to_doc(r) for r in report.rotations],
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# the refinement loop


def progressive_texture(mesh: TriangleMesh, generator, plan: BakePlan, *,
                        workdir, atlas_size: int = 1024, penalty_scale: float = 8.0,
                        candidates=None, prompt: str = "",
                        reference_image=None) -> tuple[TextureAtlas, CoverageReport]:
    """Iterate generate -> bake -> fuse until the coverage target is met.

    Iteration 1 uses the identity rotation; later iterations take the plan's
    rotation or pick the best-scoring candidate.  Conditioning frames,
    provider responses, and the fused atlas are persisted per iteration under
    `workdir/iteration_XX/`.
    """
    from .generator import GenerationRequest, write_manifest  # local: avoids cycle

    if not mesh.has_uvs:
        raise MissingUVsError("progressive texturing requires a UV parameterization")
    generate = generator.generate if hasattr(generator, "generate") else generator
    if candidates is None:
        candidates = rotation_grid()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)

    table = build_texel_table(mesh, atlas_size)
    master = TextureAtlas.empty(atlas_size)
    history: list[float] = []
    used: list[Rotation] = []

    for k in range(plan.max_iterations):
        step = plan.step(k)
        trajectory = step.trajectory.build()
        if step.rotation is not None:
            rot = step.rotation
        elif k == 0:
            rot = Rotation.identity()
        else:
            rot = select_base_rotation(mesh, master, candidates, trajectory,
                                       plan.confidence_threshold, table=table)
        rmesh = rotate_mesh(mesh, rot)
        gbuffers = [render_color(rmesh, master, pose, plan.confidence_threshold)
                    for pose in trajectory.poses]

        itdir = workdir / f"iteration_{k + 1:02d}"
        request_dir = itdir / "request"
        write_frames(request_dir, gbuffers, trajectory.near, trajectory.far)
        save_trajectory(request_dir / "trajectory.json", trajectory)
        request = GenerationRequest(frames_dir=request_dir,
                                    trajectory_file=request_dir / "trajectory.json",
                                    prompt=prompt, reference_image=reference_image,
                                    rotation=rot)
        write_manifest(request)
        try:
            response = generate(request)
        except ProviderError as e:
            raise e.__class__(f"iteration {k + 1}: {e}") from e

        colors = read_color_frames(Path(response.frames_dir) / "color")
        if len(colors) != trajectory.frame_count:
            raise ProviderError(
                f"iteration {k + 1}: provider returned {len(colors)} frames, "
                f"expected {trajectory.frame_count}")
        partial = bake_video(rmesh, list(zip(colors, gbuffers)), trajectory,
                             atlas_size, penalty_scale,
                             index=build_visibility(rmesh), table=table.rotated(rot))
        master = fuse(master, partial)
        save_atlas(master, itdir / "atlas")

        cov = coverage(master, table.covered, plan.confidence_threshold)
        if history and cov <= history[-1]:
            warnings.warn(f"coverage did not increase in iteration {k + 1} "
                          f"({history[-1]:.4f} -> {cov:.4f})")
        history.append(cov)
        used.append(rot)
        if cov >= plan.coverage_target:
            break

    report = CoverageReport(tuple(history), tuple(used))
    save_coverage_report(workdir / "coverage_report.json", report)
    return master, report

"""Command-line pipeline.

Subcommands: condition, bake, run, eval, dataset, plan.  Configuration
precedence is flags > config file (--config, JSON) > built-in defaults.
Outputs are staged in a temporary sibling directory and renamed into place
on success.  Exit status: 0 success, 1 validation error, 2 runtime/provider
error.
"""
from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import _png
from .bake import TextureAtlas, bake_video, build_texel_table, load_atlas, save_atlas
from .camera import TrajectoryParams, load_trajectory, save_trajectory
from .errors import InputError, ProviderError, TurnbakeError
from .fusion import (BakePlan, PlanStep, coverage, load_plan, progressive_texture,
                     rotation_grid, save_plan)
from .generator import FilesystemGenerator, HttpGenerator, OracleGenerator
from .mesh import Rotation, TriangleMesh, load_mesh, normalize_mesh, rotate_mesh
from .metrics import evaluate_bake, save_report
from .render import read_color_frames, read_frames, render_turntable, write_frames

DEFAULTS = {
    "r": 2.2,
    "z": 0.8,
    "frames": 61,
    "width": 512,
    "height": 512,
    "fov": None,          # auto from distance and bounding sphere
    "margin": 1.1,
    "atlas_size": 1024,
    "penalty_scale": 8.0,
    "confidence_threshold": 0.05,
    "coverage_target": 0.98,
    "max_iterations": 4,
    "yaw_candidates": 8,
    "pitches": "0,-45,45",
    "generator": "oracle",
    "timeout": 300.0,
    "seed": 0,
    "r_range": "1.8,2.8",
    "z_range": "0.2,1.2",
    "prompt": "",
}


class Config:
    """Layered value lookup: CLI flag, then config file, then default."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file = {}
        cfg_path = getattr(args, "config", None)
        if cfg_path:
            try:
                self.file = json.loads(Path(cfg_path).read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise InputError(f"cannot read config file {cfg_path}: {e}") from e
            if not isinstance(self.file, dict):
                raise InputError(f"config file {cfg_path} must hold a JSON object")

    def get(self, key: str):
        v = getattr(self.args, key, None)
        if v is not None:
            return v
        if key in self.file:
            return self.file[key]
        return DEFAULTS.get(key)

    def trajectory_params(self) -> TrajectoryParams:
        p = TrajectoryParams(
            r=float(self.get("r")), z=float(self.get("z")),
            frame_count=int(self.get("frames")),
            width=int(self.get("width")), height=int(self.get("height")),
            fov_y=None if self.get("fov") is None else float(self.get("fov")),
            margin=float(self.get("margin")))
        if p.frame_count < 2:
            raise InputError("frame count must be at least 2")
        if p.width < 16 or p.height < 16:
            raise InputError("resolution must be at least 16x16")
        return p

    def candidates(self):
        pitches = _parse_floats(str(self.get("pitches")))
        return rotation_grid(int(self.get("yaw_candidates")), tuple(pitches))


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as e:
        raise InputError(f"cannot parse float list '{text}'") from e


@contextmanager
def atomic_dir(final: Path, force: bool = False):
    final = Path(final)
    if final.exists() and not force:
        raise InputError(f"output {final} already exists (use --force to replace)")
    tmp = final.with_name(final.name + f".tmp-{os.getpid()}")
    if tmp.exists():
        shutil.rmtree(tmp)
    tmp.mkdir(parents=True)
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if final.exists():
        shutil.rmtree(final)
    final.parent.mkdir(parents=True, exist_ok=True)
    os.replace(tmp, final)


def _load_normalized_mesh(path) -> "TriangleMesh":
    return normalize_mesh(load_mesh(path))


def _load_reference_atlas(path) -> TextureAtlas:
    """Atlas directory (color.png + confidence.bin) or a plain texture image."""
    path = Path(path)
    if path.is_dir():
        return load_atlas(path)
    color = _png.read_color_png(path)
    return TextureAtlas(color, np.ones(color.shape[:2]))


# ---------------------------------------------------------------------------
# subcommands


def cmd_condition(cfg: Config) -> None:
    mesh = _load_normalized_mesh(cfg.get("mesh"))
    trajectory = cfg.trajectory_params().build()
    gbuffers = render_turntable(mesh, None, trajectory)
    with atomic_dir(Path(cfg.get("out")), cfg.get("force")) as tmp:
        write_frames(tmp, gbuffers, trajectory.near, trajectory.far)
        save_trajectory(tmp / "trajectory.json", trajectory)
    print(f"wrote {trajectory.frame_count} frames per kind to {cfg.get('out')}")


def cmd_bake(cfg: Config) -> None:
    mesh = _load_normalized_mesh(cfg.get("mesh"))
    frames_dir = Path(cfg.get("frames_dir"))
    traj_file = frames_dir / "trajectory.json"
    if not traj_file.exists():
        raise InputError(f"no trajectory.json in {frames_dir}")
    trajectory = load_trajectory(traj_file)
    gbuffers = read_frames(frames_dir, trajectory.near, trajectory.far)
    if gbuffers[0].color is None:
        raise InputError(f"{frames_dir} has no color frames to bake")
    atlas_size = int(cfg.get("atlas_size"))
    table = build_texel_table(mesh, atlas_size)
    atlas = bake_video(mesh, gbuffers, trajectory, atlas_size,
                       float(cfg.get("penalty_scale")), table=table)
    threshold = float(cfg.get("confidence_threshold"))
    cov = coverage(atlas, table.covered, threshold)
    with atomic_dir(Path(cfg.get("out")), cfg.get("force")) as tmp:
        save_atlas(atlas, tmp, write_16bit=bool(cfg.get("write_16bit")))
        summary = {"covered_fraction": cov, "confidence_threshold": threshold,
                   "occupied_texels": int(table.covered.sum()),
                   "atlas_size": atlas_size}
        (tmp / "coverage.json").write_text(json.dumps(summary, indent=1) + "\n",
                                           encoding="utf-8")
    print(f"baked {atlas_size}x{atlas_size} atlas, coverage {cov:.4f}")


def _make_generator(cfg: Config, mesh):
    kind = str(cfg.get("generator"))
    if kind == "oracle":
        ref_mesh_path = cfg.get("reference_mesh")
        ref_mesh = _load_normalized_mesh(ref_mesh_path) if ref_mesh_path else mesh
        ref_atlas_path = cfg.get("reference_atlas")
        if ref_atlas_path is None:
            raise InputError("the oracle generator needs --reference-atlas")
        return OracleGenerator(ref_mesh, _load_reference_atlas(ref_atlas_path))
    if kind == "fs":
        exchange = cfg.get("exchange_dir")
        if exchange is None:
            raise InputError("the fs generator needs --exchange-dir")
        return FilesystemGenerator(Path(exchange), float(cfg.get("timeout")))
    if kind == "http":
        endpoint = cfg.get("endpoint") or os.environ.get("TURNBAKE_ENDPOINT")
        if not endpoint:
            raise InputError("the http generator needs --endpoint or TURNBAKE_ENDPOINT")
        timeout = cfg.get("timeout")
        if getattr(cfg.args, "timeout", None) is None and "timeout" not in cfg.file:
            timeout = float(os.environ.get("TURNBAKE_TIMEOUT", DEFAULTS["timeout"]))
        return HttpGenerator(str(endpoint), float(timeout))
    raise InputError(f"unknown generator '{kind}' (expected oracle, fs, or http)")


def cmd_run(cfg: Config) -> None:
    mesh = _load_normalized_mesh(cfg.get("mesh"))
    generator = _make_generator(cfg, mesh)
    params = cfg.trajectory_params()
    plan_file = cfg.get("plan")
    if plan_file:
        plan = load_plan(plan_file)
    else:
        max_iter = int(cfg.get("max_iterations"))
        steps = [PlanStep(Rotation.identity(), params)] + \
                [PlanStep(None, params)] * (max_iter - 1)
        plan = BakePlan(tuple(steps), float(cfg.get("coverage_target")),
                        float(cfg.get("confidence_threshold")), max_iter)
    with atomic_dir(Path(cfg.get("out")), cfg.get("force")) as tmp:
        atlas, report = progressive_texture(
            mesh, generator, plan, workdir=tmp / "iterations",
            atlas_size=int(cfg.get("atlas_size")),
            penalty_scale=float(cfg.get("penalty_scale")),
            candidates=cfg.candidates(), prompt=str(cfg.get("prompt")))
        save_atlas(atlas, tmp / "atlas", write_16bit=bool(cfg.get("write_16bit")))
    print(report.table())


def cmd_eval(cfg: Config) -> None:
    mesh = _load_normalized_mesh(cfg.get("mesh"))
    baked = load_atlas(cfg.get("atlas"))
    ref_path = Path(cfg.get("reference"))
    if not ref_path.exists():
        raise InputError(f"reference {ref_path} does not exist")
    if ref_path.is_dir() and (ref_path / "color").is_dir():
        reference = read_color_frames(ref_path / "color")
    else:
        reference = _load_reference_atlas(ref_path)
    traj_file = cfg.get("trajectory")
    trajectory = load_trajectory(traj_file) if traj_file else cfg.trajectory_params().build()
    report, cov = evaluate_bake(mesh, baked, reference, trajectory,
                                confidence_threshold=float(cfg.get("confidence_threshold")))
    with atomic_dir(Path(cfg.get("out")), cfg.get("force")) as tmp:
        save_report(report, cov, tmp)
    print(f"mean psnr {report.mean_psnr:.3f} dB, mean ssim {report.mean_ssim:.5f}, "
          f"coverage {cov:.4f}")


def cmd_dataset(cfg: Config) -> None:
    """Per-asset conditioning + reference renders with seeded sampling.

    All randomness derives from SeedSequence([seed, asset_index]), drawn in a
    fixed order (r, z, rotation), so reruns with one seed reproduce the same
    trajectories byte for byte.
    """
    assets_file = Path(cfg.get("assets"))
    try:
        assets = json.loads(assets_file.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read asset list {assets_file}: {e}") from e
    if not isinstance(assets, list):
        raise InputError("asset list must be a JSON array of {mesh, texture} objects")
    r_lo, r_hi = _parse_floats(str(cfg.get("r_range")))
    z_lo, z_hi = _parse_floats(str(cfg.get("z_range")))
    seed = int(cfg.get("seed"))
    params = cfg.trajectory_params()
    failures = 0
    with atomic_dir(Path(cfg.get("out")), cfg.get("force")) as tmp:
        for i, asset in enumerate(assets):
            name = Path(asset["mesh"]).stem
            try:
                mesh = _load_normalized_mesh(asset["mesh"])
                if not mesh.has_uvs:
                    raise InputError("asset has no UVs")
                atlas = _load_reference_atlas(asset["texture"])
                rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
                r = float(rng.uniform(r_lo, r_hi))
                z = float(rng.uniform(z_lo, z_hi))
                quat = rng.normal(size=4)
                rot = Rotation(quat / np.linalg.norm(quat))
                trajectory = params.with_updates(r=r, z=z, fov_y=None).build()
                rotated = rotate_mesh(mesh, rot)
                gbuffers = render_turntable(rotated, atlas, trajectory, 0.0)
                asset_dir = tmp / f"{i:03d}_{name}"
                write_frames(asset_dir, gbuffers, trajectory.near, trajectory.far)
                save_trajectory(asset_dir / "trajectory.json", trajectory)
                doc = {"mesh": str(asset["mesh"]), "texture": str(asset["texture"]),
                       "r": r, "z": z, "rotation_wxyz": [float(v) for v in rot.quat],
                       "seed": seed, "asset_index": i}
                (asset_dir / "asset.json").write_text(json.dumps(doc, indent=1) + "\n",
                                                      encoding="utf-8")
                print(f"[{i + 1}/{len(assets)}] {name}: r={r:.3f} z={z:.3f}")
            except TurnbakeError as e:
                failures += 1
                print(f"[{i + 1}/{len(assets)}] {name}: skipped ({e})", file=sys.stderr)
    print(f"dataset complete, {len(assets) - failures}/{len(assets)} assets")


def cmd_plan(cfg: Config) -> None:
    src = cfg.get("from_plan")
    if src:
        plan = load_plan(src)
        updates = {}
        for key in ("coverage_target", "confidence_threshold", "max_iterations"):
            if getattr(cfg.args, key, None) is not None:
                updates[key] = getattr(cfg.args, key)
        plan = BakePlan(plan.steps,
                        float(updates.get("coverage_target", plan.coverage_target)),
                        float(updates.get("confidence_threshold", plan.confidence_threshold)),
                        int(updates.get("max_iterations", plan.max_iterations)))
    else:
        params = cfg.trajectory_params()
        max_iter = int(cfg.get("max_iterations"))
        steps = [PlanStep(Rotation.identity(), params)] + \
                [PlanStep(None, params)] * (max_iter - 1)
        plan = BakePlan(tuple(steps), float(cfg.get("coverage_target")),
                        float(cfg.get("confidence_threshold")), max_iter)
    out = Path(cfg.get("out"))
    out.parent.mkdir(parents=True, exist_ok=True)
    save_plan(out, plan)
    print(f"wrote plan with {len(plan.steps)} steps to {out} "
          f"(target {plan.coverage_target}, max {plan.max_iterations} iterations)")


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--force", action="store_true", default=None,
                   help="replace existing output directories")


def _add_trajectory(p: argparse.ArgumentParser) -> None:
    p.add_argument("--r", type=float, help="orbit radius")
    p.add_argument("--z", type=float, help="camera height")
    p.add_argument("--frames", type=int, help="frame count T")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--fov", type=float, help="vertical FOV in radians (default: auto)")
    p.add_argument("--margin", type=float, help="bounding-sphere framing margin")


def _add_bake(p: argparse.ArgumentParser) -> None:
    p.add_argument("--atlas-size", dest="atlas_size", type=int)
    p.add_argument("--penalty-scale", dest="penalty_scale", type=float)
    p.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)
    p.add_argument("--write-16bit", dest="write_16bit", action="store_true", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="turnbake",
                                 description="Turntable conditioning renders and "
                                             "confidence-weighted UV texture baking")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("condition", help="render conditioning g-buffer frames")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    _add_trajectory(p)
    _add_common(p)
    p.set_defaults(func=cmd_condition)

    p = sub.add_parser("bake", help="back-project a frame directory into an atlas")
    p.add_argument("--mesh", required=True)
    p.add_argument("--frames-dir", dest="frames_dir", required=True,
                   help="directory with g-buffer kinds, color frames, trajectory.json")
    p.add_argument("--out", required=True)
    _add_bake(p)
    _add_common(p)
    p.set_defaults(func=cmd_bake)

    p = sub.add_parser("run", help="full progressive texturing pipeline")
    p.add_argument("--mesh", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--plan", help="BakePlan JSON (default: built from flags)")
    p.add_argument("--generator", choices=["oracle", "fs", "http"])
    p.add_argument("--reference-mesh", dest="reference_mesh")
    p.add_argument("--reference-atlas", dest="reference_atlas",
                   help="oracle appearance: atlas directory or texture image")
    p.add_argument("--exchange-dir", dest="exchange_dir")
    p.add_argument("--endpoint", help="http generator endpoint (or TURNBAKE_ENDPOINT)")
    p.add_argument("--timeout", type=float, help="provider timeout seconds (or TURNBAKE_TIMEOUT)")
    p.add_argument("--prompt")
    p.add_argument("--coverage-target", dest="coverage_target", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--yaw-candidates", dest="yaw_candidates", type=int)
    p.add_argument("--pitches", help="comma-separated candidate pitches in degrees")
    _add_trajectory(p)
    _add_bake(p)
    _add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="render a baked atlas and score it against a reference")
    p.add_argument("--mesh", required=True)
    p.add_argument("--atlas", required=True, help="baked atlas directory")
    p.add_argument("--reference", required=True,
                   help="reference: atlas directory, texture image, or frames directory")
    p.add_argument("--trajectory", help="trajectory.json (default: built from flags)")
    p.add_argument("--out", required=True)
    p.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)
    _add_trajectory(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dataset", help="seeded conditioning + reference renders per asset")
    p.add_argument("--assets", required=True,
                   help="JSON array of {mesh, texture} asset records")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--r-range", dest="r_range", help="lo,hi sampling range for r")
    p.add_argument("--z-range", dest="z_range", help="lo,hi sampling range for z")
    _add_trajectory(p)
    _add_common(p)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("plan", help="emit or edit a BakePlan file")
    p.add_argument("--out", required=True)
    p.add_argument("--from", dest="from_plan", help="existing plan to edit")
    p.add_argument("--coverage-target", dest="coverage_target", type=float)
    p.add_argument("--confidence-threshold", dest="confidence_threshold", type=float)
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    _add_trajectory(p)
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = Config(args)
        args.func(cfg)
        return 0
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ProviderError as e:
        print(f"provider error: {e}", file=sys.stderr)
        return 2
    except TurnbakeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

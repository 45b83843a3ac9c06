"""Appearance-provider boundary: conditioning frames in, RGB turntable out.

Three providers share one contract: the oracle re-renders a reference
textured mesh (perfect 3D consistency, used for testing and closed-loop
evaluation), the filesystem adapter hands frames to any external process
through an exchange directory, and the HTTP adapter talks to a remote
service.  Responses are validated for frame count and resolution; mask
agreement is enforced only for the oracle, where it is exact by construction
up to a small tolerance.
"""
from __future__ import annotations

import io
import json
import time
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from . import _png
from .bake import TextureAtlas
from .camera import load_trajectory
from .errors import (GeometryMismatchError, InputError, MalformedResponseError,
                     ProviderError, ProviderTimeout, RemoteJobError)
from .mesh import Rotation, TriangleMesh, rotate_mesh
from .render import count_frames, frame_path, render_color

MASK_MISMATCH_LIMIT = 0.005


@dataclass(frozen=True)
class GenerationRequest:
    """Conditioning frame directory plus the trajectory the frames follow.

    `rotation` is the base rotation the conditioning frames were rendered
    under; providers that re-render geometry (the oracle) need it, pixel-space
    providers may ignore it.
    """

    frames_dir: Path
    trajectory_file: Path
    prompt: str = ""
    reference_image: Path | None = None
    rotation: Rotation = field(default_factory=Rotation.identity)

    def frame_kinds(self) -> list[str]:
        root = Path(self.frames_dir)
        return [d.name for d in sorted(root.iterdir()) if d.is_dir()] if root.is_dir() else []


@dataclass(frozen=True)
class GenerationResponse:
    frames_dir: Path      # directory containing a color/ frame subdirectory
    provider: str
    duration_seconds: float


def write_manifest(request: GenerationRequest) -> None:
    """Self-describing manifest next to the frames, so providers need no other context."""
    traj = load_trajectory(request.trajectory_file)
    doc = {
        "prompt": request.prompt,
        "trajectory": Path(request.trajectory_file).name,
        "frame_kinds": request.frame_kinds(),
        "frame_count": traj.frame_count,
        "resolution": [traj.width, traj.height],
        "rotation_wxyz": [float(v) for v in request.rotation.quat],
        "reference_image": str(request.reference_image) if request.reference_image else None,
    }
    (Path(request.frames_dir) / "manifest.json").write_text(
        json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def validate_request(request: GenerationRequest) -> None:
    """Check every present frame kind has one frame per pose, consistent sizes."""
    traj = load_trajectory(request.trajectory_file)
    kinds = request.frame_kinds()
    if not kinds:
        raise InputError(f"request has no frame directories under {request.frames_dir}")
    for kind in kinds:
        n = count_frames(request.frames_dir, kind)
        if n != traj.frame_count:
            raise InputError(f"kind '{kind}' has {n} frames, expected {traj.frame_count}")
    mask = _png.read_mask_png(frame_path(request.frames_dir, "mask", 0))
    if mask.shape != (traj.height, traj.width):
        raise InputError("frame resolution disagrees with the trajectory file")


def validate_response_frames(response_dir, frame_count: int, resolution) -> None:
    color_dir = Path(response_dir) / "color"
    n = count_frames(response_dir, "color")
    if n != frame_count:
        raise MalformedResponseError(
            f"response has {n} color frames under {color_dir}, expected {frame_count}")
    first = _png.read_color_png(frame_path(response_dir, "color", 0))
    w, h = resolution
    if first.shape[:2] != (h, w):
        raise MalformedResponseError(
            f"response resolution {first.shape[1]}x{first.shape[0]}, expected {w}x{h}")


# ---------------------------------------------------------------------------
# oracle provider


@dataclass
class OracleGenerator:
    """Re-renders a reference textured mesh along the request trajectory.

    Perfectly 3D-consistent by construction; refuses requests whose
    conditioning masks disagree with its own geometry.
    """

    mesh: TriangleMesh
    atlas: TextureAtlas
    mask_mismatch_limit: float = MASK_MISMATCH_LIMIT

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        start = time.perf_counter()
        traj = load_trajectory(request.trajectory_file)
        rmesh = rotate_mesh(self.mesh, request.rotation)
        frames = [render_color(rmesh, self.atlas, pose, 0.0) for pose in traj.poses]

        for t, gb in enumerate(frames):
            want = _png.read_mask_png(frame_path(request.frames_dir, "mask", t))
            if want.shape != gb.mask.shape:
                raise GeometryMismatchError(
                    f"frame {t}: conditioning mask resolution {want.shape} "
                    f"!= rendered {gb.mask.shape}")
            mismatch = float(np.mean(want != gb.mask))
            if mismatch > self.mask_mismatch_limit:
                raise GeometryMismatchError(
                    f"frame {t}: {mismatch:.2%} of mask pixels disagree with the "
                    f"conditioning frames (reference geometry mismatch)")

        response_dir = Path(request.frames_dir).parent / "response"
        for t, gb in enumerate(frames):
            _png.write_color_png(frame_path(response_dir, "color", t), gb.color)
        validate_response_frames(response_dir, traj.frame_count, (traj.width, traj.height))
        return GenerationResponse(response_dir, "oracle",
                                  time.perf_counter() - start)


def oracle_generate(request: GenerationRequest, mesh: TriangleMesh,
                    atlas: TextureAtlas) -> GenerationResponse:
    return OracleGenerator(mesh, atlas).generate(request)


# ---------------------------------------------------------------------------
# filesystem exchange provider


@dataclass
class FilesystemGenerator:
    """Hands the request to an external responder through an exchange directory.

    Layout per job: `<exchange>/job_NNNN/request/...` (frames, trajectory,
    manifest) and `<exchange>/job_NNNN/response/color/....png` plus an empty
    `DONE` marker the responder must create last (atomic-rename semantics).
    """

    exchange_dir: Path
    timeout: float = 60.0
    poll_interval: float = 0.1

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        import shutil

        start = time.perf_counter()
        traj = load_trajectory(request.trajectory_file)
        exchange = Path(self.exchange_dir)
        exchange.mkdir(parents=True, exist_ok=True)
        job_dir = exchange / f"job_{len(list(exchange.glob('job_*'))) + 1:04d}"
        request_dir = job_dir / "request"
        shutil.copytree(request.frames_dir, request_dir)
        if not (request_dir / "manifest.json").exists():
            write_manifest(GenerationRequest(request_dir, request_dir / "trajectory.json",
                                             request.prompt, request.reference_image,
                                             request.rotation))

        response_dir = job_dir / "response"
        deadline = start + self.timeout
        while not (response_dir / "DONE").exists():
            if time.perf_counter() > deadline:
                raise ProviderTimeout(
                    f"no responder completed {job_dir} within {self.timeout:.1f}s")
            time.sleep(self.poll_interval)
        validate_response_frames(response_dir, traj.frame_count, (traj.width, traj.height))
        return GenerationResponse(response_dir, "fs", time.perf_counter() - start)


def fs_generate(request: GenerationRequest, exchange_dir,
                timeout: float = 60.0) -> GenerationResponse:
    return FilesystemGenerator(Path(exchange_dir), timeout).generate(request)


# ---------------------------------------------------------------------------
# HTTP provider


@dataclass
class HttpGenerator:
    """Client for a remote generation service.

    POST {endpoint}/jobs with a zip of the request directory -> {"job_id"};
    GET {endpoint}/jobs/{id} -> {"status": queued|running|done|failed};
    GET {endpoint}/jobs/{id}/result -> zip of the response directory.
    """

    endpoint: str
    timeout: float = 300.0
    poll_interval: float = 0.25
    workdir: Path | None = None

    def generate(self, request: GenerationRequest) -> GenerationResponse:
        start = time.perf_counter()
        traj = load_trajectory(request.trajectory_file)
        base = self.endpoint.rstrip("/")
        try:
            payload = _zip_directory(Path(request.frames_dir))
            reply = requests.post(f"{base}/jobs", data=payload,
                                  headers={"Content-Type": "application/zip"},
                                  timeout=self.timeout)
            reply.raise_for_status()
            job_id = reply.json()["job_id"]

            deadline = start + self.timeout
            while True:
                status = requests.get(f"{base}/jobs/{job_id}", timeout=self.timeout)
                status.raise_for_status()
                state = status.json().get("status")
                if state == "done":
                    break
                if state == "failed":
                    raise RemoteJobError(
                        f"job {job_id} failed: {status.json().get('error', 'unknown')}")
                if time.perf_counter() > deadline:
                    raise ProviderTimeout(f"job {job_id} still '{state}' after "
                                          f"{self.timeout:.1f}s")
                time.sleep(self.poll_interval)

            result = requests.get(f"{base}/jobs/{job_id}/result", timeout=self.timeout)
            result.raise_for_status()
        except requests.RequestException as e:
            raise ProviderError(f"transport failure talking to {base}: {e}") from e

        out_root = Path(self.workdir) if self.workdir else Path(request.frames_dir).parent
        response_dir = out_root / "response"
        _unzip_to(result.content, response_dir)
        validate_response_frames(response_dir, traj.frame_count, (traj.width, traj.height))
        return GenerationResponse(response_dir, "http", time.perf_counter() - start)


def http_generate(request: GenerationRequest, endpoint: str,
                  timeout: float = 300.0) -> GenerationResponse:
    return HttpGenerator(endpoint, timeout).generate(request)


def _zip_directory(root: Path) -> bytes:
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for p in sorted(root.rglob("*")):
            if p.is_file():
                zf.write(p, p.relative_to(root).as_posix())
    return buf.getvalue()


def _unzip_to(blob: bytes, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        with zipfile.ZipFile(io.BytesIO(blob)) as zf:
            zf.extractall(out_dir)
    except zipfile.BadZipFile as e:
        raise MalformedResponseError(f"result archive is not a valid zip: {e}") from e

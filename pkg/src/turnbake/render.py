"""Software rasterizer: aligned per-frame g-buffers and textured re-renders.

G-buffers are z-buffered with no antialiasing so the geometric channels stay
strictly aligned and unmixed.  Rasterization is deterministic: triangles are
consumed in face order and depth ties keep the lower face index.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _png
from ._kernels import rasterize_triangles
from .camera import CameraPose, OrbitTrajectory, project_points
from .errors import InputError, MissingUVsError
from .mesh import TriangleMesh

FRAME_KINDS = ("normal", "position", "depth", "mask", "color", "inpaint")
GEOMETRY_KINDS = ("normal", "position", "depth", "mask")


@dataclass(frozen=True)
class GBuffer:
    """Aligned per-pixel rasters for one camera pose.

    mask is the coverage; depth is camera-space (inf outside the mask);
    normal and position are zero outside the mask.  color and inpaint are
    present only for renders of (partially) textured meshes.
    """

    normal: np.ndarray            # (H, W, 3) float32
    position: np.ndarray          # (H, W, 3) float32
    depth: np.ndarray             # (H, W) float32, inf where empty
    mask: np.ndarray              # (H, W) bool
    color: np.ndarray | None = None    # (H, W, 3) float32 in [0, 1]
    inpaint: np.ndarray | None = None  # (H, W) bool

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.mask.shape[1], self.mask.shape[0])


@dataclass(frozen=True)
class ShadingCache:
    """Per-pixel face index and interpolated UV for covered pixels."""

    face: np.ndarray             # (H, W) int32, -1 where empty
    uv: np.ndarray | None        # (H, W, 2) float32, zero where empty
    bary: np.ndarray             # (H, W, 3) float32 perspective-corrected


def rasterize(mesh: TriangleMesh, pose: CameraPose) -> tuple[GBuffer, ShadingCache]:
    """Rasterize the mesh into a geometry-only GBuffer plus a shading cache."""
    corners = mesh.face_positions()                       # (F, 3, 3)
    xy, z = project_points(pose, corners.reshape(-1, 3))
    tri_xy = np.ascontiguousarray(xy.reshape(-1, 3, 2))
    tri_z = np.ascontiguousarray(z.reshape(-1, 3))
    face, depth, b0, b1 = rasterize_triangles(tri_xy, tri_z, pose.width, pose.height)

    mask = face >= 0
    h, w = mask.shape
    normal = np.zeros((h, w, 3), np.float32)
    position = np.zeros((h, w, 3), np.float32)
    bary_img = np.zeros((h, w, 3), np.float32)
    uv_img = np.zeros((h, w, 2), np.float32) if mesh.has_uvs else None

    idx = face[mask]
    if idx.size:
        b = np.stack([b0[mask], b1[mask], 1.0 - b0[mask] - b1[mask]], axis=1)
        pos = np.einsum("kc,kcd->kd", b, mesh.positions[mesh.faces[idx, :, 0]])
        nrm = np.einsum("kc,kcd->kd", b, mesh.normals[mesh.faces[idx, :, 1]])
        lengths = np.linalg.norm(nrm, axis=1, keepdims=True)
        nrm = np.divide(nrm, lengths, out=nrm, where=lengths > 1e-20)
        position[mask] = pos.astype(np.float32)
        normal[mask] = nrm.astype(np.float32)
        bary_img[mask] = b.astype(np.float32)
        if uv_img is not None:
            uv = np.einsum("kc,kcd->kd", b, mesh.uvs[mesh.faces[idx, :, 2]])
            uv_img[mask] = uv.astype(np.float32)

    depth_f = np.where(mask, depth, np.inf).astype(np.float32)
    gbuf = GBuffer(normal=normal, position=position, depth=depth_f, mask=mask)
    return gbuf, ShadingCache(face=face, uv=uv_img, bary=bary_img)


def render_gbuffer(mesh: TriangleMesh, pose: CameraPose) -> GBuffer:
    return rasterize(mesh, pose)[0]


def bilinear_pixels(image: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Bilinear sample at continuous pixel coordinates, clamped at borders."""
    h, w = image.shape[:2]
    x = np.clip(np.asarray(x, np.float64), 0.0, w - 1.0)
    y = np.clip(np.asarray(y, np.float64), 0.0, h - 1.0)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if image.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    top = image[y0, x0] * (1.0 - fx) + image[y0, x1] * fx
    bot = image[y1, x0] * (1.0 - fx) + image[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def sample_uv(image: np.ndarray, uv: np.ndarray) -> np.ndarray:
    """Bilinear sample an atlas-style image at UV coordinates (v up, row 0 top)."""
    uv = np.asarray(uv, np.float64)
    h, w = image.shape[:2]
    return bilinear_pixels(image, uv[..., 0] * w - 0.5, (1.0 - uv[..., 1]) * h - 0.5)


def render_color(mesh: TriangleMesh, atlas, pose: CameraPose,
                 confidence_threshold: float) -> GBuffer:
    """Render the mesh textured by `atlas`, with an inpaint mask.

    A covered pixel is flagged for inpainting when the bilinearly sampled
    confidence at its UV falls below `confidence_threshold`.
    """
    if not mesh.has_uvs:
        raise MissingUVsError("textured rendering requires a UV parameterization")
    gbuf, cache = rasterize(mesh, pose)
    h, w = gbuf.mask.shape
    color = np.zeros((h, w, 3), np.float32)
    inpaint = np.zeros((h, w), bool)
    if gbuf.mask.any():
        uv = cache.uv[gbuf.mask]
        color[gbuf.mask] = sample_uv(atlas.color, uv).astype(np.float32)
        conf = sample_uv(atlas.confidence, uv)
        inpaint[gbuf.mask] = conf < confidence_threshold
    return GBuffer(normal=gbuf.normal, position=gbuf.position, depth=gbuf.depth,
                   mask=gbuf.mask, color=color, inpaint=inpaint)


def render_turntable(mesh: TriangleMesh, atlas, trajectory: OrbitTrajectory,
                     confidence_threshold: float = 0.05) -> list[GBuffer]:
    """One GBuffer per trajectory pose; textured when `atlas` is not None."""
    if atlas is None:
        return [render_gbuffer(mesh, pose) for pose in trajectory.poses]
    return [render_color(mesh, atlas, pose, confidence_threshold)
            for pose in trajectory.poses]


# ---------------------------------------------------------------------------
# frame directories: frames/{kind}/{t:04d}.png


def frame_path(root, kind: str, t: int) -> Path:
    return Path(root) / kind / f"{t:04d}.png"


def write_frames(root, gbuffers: list[GBuffer], near: float, far: float) -> None:
    root = Path(root)
    for t, gb in enumerate(gbuffers):
        _png.write_unit_vector_png(frame_path(root, "normal", t), gb.normal)
        _png.write_unit_vector_png(frame_path(root, "position", t), np.clip(gb.position, -1.0, 1.0))
        _png.write_depth_png(frame_path(root, "depth", t), gb.depth, near, far)
        _png.write_mask_png(frame_path(root, "mask", t), gb.mask)
        if gb.color is not None:
            _png.write_color_png(frame_path(root, "color", t), gb.color)
        if gb.inpaint is not None:
            _png.write_mask_png(frame_path(root, "inpaint", t), gb.inpaint)


def count_frames(root, kind: str) -> int:
    d = Path(root) / kind
    if not d.is_dir():
        return 0
    return len(sorted(d.glob("[0-9][0-9][0-9][0-9].png")))


def read_frames(root, near: float, far: float) -> list[GBuffer]:
    """Rebuild GBuffers from a frame directory (inverse of write_frames).

    Depth decodes through its 16-bit quantization; pixels outside the mask
    are forced back to the empty convention.
    """
    root = Path(root)
    n = count_frames(root, "mask")
    if n == 0:
        raise InputError(f"no mask frames under {root}")
    has_color = count_frames(root, "color") == n
    has_inpaint = count_frames(root, "inpaint") == n
    out = []
    for t in range(n):
        mask = _png.read_mask_png(frame_path(root, "mask", t))
        normal = _png.read_unit_vector_png(frame_path(root, "normal", t)).astype(np.float32)
        position = _png.read_unit_vector_png(frame_path(root, "position", t)).astype(np.float32)
        depth = _png.read_depth_png(frame_path(root, "depth", t), near, far).astype(np.float32)
        normal[~mask] = 0.0
        position[~mask] = 0.0
        depth = np.where(mask, depth, np.float32(np.inf))
        color = inpaint = None
        if has_color:
            color = _png.read_color_png(frame_path(root, "color", t)).astype(np.float32)
        if has_inpaint:
            inpaint = _png.read_mask_png(frame_path(root, "inpaint", t)) & mask
        out.append(GBuffer(normal=normal, position=position, depth=depth,
                           mask=mask, color=color, inpaint=inpaint))
    return out


def read_color_frames(color_dir) -> list[np.ndarray]:
    """Load {t:04d}.png RGB frames from one directory, in frame order."""
    color_dir = Path(color_dir)
    paths = sorted(color_dir.glob("[0-9][0-9][0-9][0-9].png"))
    if not paths:
        raise InputError(f"no color frames under {color_dir}")
    return [_png.read_color_png(p) for p in paths]

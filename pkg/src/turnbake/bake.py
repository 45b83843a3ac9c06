"""Back-projection of turntable frames into UV space.

Per frame, every UV-covered texel is projected into the image; ray-traced
visibility decides whether the texel sees the camera, and the blending
weight combines an angle incentive (cos^4 of the view angle) with a depth
Laplacian penalty that suppresses samples near depth edges.  Accumulating
weighted samples over all frames yields a color atlas plus a confidence map.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _png
from ._kernels import (brute_nearest_batch, bvh_nearest_batch, occlusion_batch,
                       rasterize_triangles)
from .camera import CameraPose, project_points
from .errors import InputError, MissingUVsError
from .mesh import Rotation, TriangleMesh
from .render import GBuffer, bilinear_pixels

VISIBILITY_REL_EPS = 1e-4
_BVH_LEAF_SIZE = 4


@dataclass(frozen=True)
class TextureAtlas:
    """UV-space color grid plus accumulated back-projection weight.

    Texels with zero confidence hold color zero (the unfilled convention).
    """

    color: np.ndarray       # (H, W, 3) float64 in [0, 1]
    confidence: np.ndarray  # (H, W) float64 >= 0

    def __post_init__(self):
        c = np.ascontiguousarray(np.asarray(self.color, np.float64))
        w = np.ascontiguousarray(np.asarray(self.confidence, np.float64))
        if c.ndim != 3 or c.shape[2] != 3 or w.shape != c.shape[:2]:
            raise InputError("atlas color must be (H, W, 3) with matching confidence grid")
        if w.min() < 0:
            raise InputError("atlas confidence must be non-negative")
        if c[w == 0].any():
            raise InputError("texels with zero confidence must have zero color")
        c.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "color", c)
        object.__setattr__(self, "confidence", w)

    @property
    def resolution(self) -> tuple[int, int]:
        return (self.color.shape[1], self.color.shape[0])

    @staticmethod
    def empty(size) -> "TextureAtlas":
        w, h = (size, size) if isinstance(size, int) else size
        return TextureAtlas(np.zeros((h, w, 3)), np.zeros((h, w)))


@dataclass(frozen=True)
class BakeWeights:
    """Per-sample weighting terms for the texels one frame contributed to."""

    rows: np.ndarray
    cols: np.ndarray
    angle: np.ndarray       # cos^4 incentive, in [0, 1]
    depth: np.ndarray       # Laplacian penalty, in [0, 1]
    similarity: np.ndarray  # angle * (1 - depth)


# ---------------------------------------------------------------------------
# weighting terms


def angle_weight(normal, view_dir):
    """(clamped cos theta)^4 between surface normal and direction to camera.

    Inputs must be unit length; back-facing samples (negative cosine) get 0.
    Broadcasts over leading dimensions.
    """
    cos = np.clip(np.sum(np.asarray(normal, np.float64) * np.asarray(view_dir, np.float64),
                         axis=-1), 0.0, 1.0)
    return cos ** 4


def depth_penalty_map(depth: np.ndarray, scale: float) -> np.ndarray:
    """clip(scale * |5-point Laplacian|, 0, 1) over a depth raster.

    Out-of-mask (non-finite) and out-of-bounds neighbors replicate the center
    value; pixels outside the mask get penalty 0.
    """
    d = np.asarray(depth, np.float64)
    finite = np.isfinite(d)
    c = np.where(finite, d, 0.0)
    cp = np.pad(c, 1, mode="edge")
    fp = np.pad(finite, 1, mode="edge")

    def neighbor(dy, dx):
        v = cp[1 + dy: 1 + dy + d.shape[0], 1 + dx: 1 + dx + d.shape[1]]
        ok = fp[1 + dy: 1 + dy + d.shape[0], 1 + dx: 1 + dx + d.shape[1]]
        return np.where(ok, v, c)

    lap = (neighbor(0, -1) + neighbor(0, 1) + neighbor(-1, 0) + neighbor(1, 0)) - 4.0 * c
    out = np.clip(scale * np.abs(lap), 0.0, 1.0)
    out[~finite] = 0.0
    return out


def depth_penalty(depth: np.ndarray, pixel, scale: float) -> float:
    """Single-pixel depth penalty; pixel is (x, y) = (column, row)."""
    d = np.asarray(depth, np.float64)
    x, y = int(pixel[0]), int(pixel[1])
    h, w = d.shape
    if not (0 <= x < w and 0 <= y < h):
        raise InputError(f"pixel {(x, y)} outside raster {w}x{h}")
    c = d[y, x]
    if not np.isfinite(c):
        raise InputError(f"depth not finite at pixel {(x, y)}")

    def neighbor(ny, nx):
        if 0 <= nx < w and 0 <= ny < h and np.isfinite(d[ny, nx]):
            return d[ny, nx]
        return c

    lap = (neighbor(y, x - 1) + neighbor(y, x + 1) + neighbor(y - 1, x) + neighbor(y + 1, x)) - 4.0 * c
    return float(np.clip(scale * np.abs(lap), 0.0, 1.0))


# ---------------------------------------------------------------------------
# ray-traced visibility


@dataclass(frozen=True)
class VisibilityIndex:
    """Median-split BVH over mesh triangles answering nearest-hit queries."""

    tri: np.ndarray        # (F, 3, 3) float64 corner positions
    node_min: np.ndarray   # (M, 3)
    node_max: np.ndarray   # (M, 3)
    node_left: np.ndarray  # (M,) child index, or -(start + 1) for leaves
    node_right: np.ndarray  # (M,) child index, or leaf triangle count
    order: np.ndarray      # (F,) leaf-order triangle indices


def build_visibility(mesh: TriangleMesh) -> VisibilityIndex:
    return build_visibility_from_triangles(mesh.face_positions())


def build_visibility_from_triangles(tri: np.ndarray) -> VisibilityIndex:
    tri = np.ascontiguousarray(np.asarray(tri, np.float64).reshape(-1, 3, 3))
    nf = tri.shape[0]
    if nf == 0:
        raise InputError("cannot build a visibility index over zero triangles")
    tmin = tri.min(axis=1)
    tmax = tri.max(axis=1)
    cent = 0.5 * (tmin + tmax)
    order = np.arange(nf, dtype=np.int64)

    node_min, node_max, node_left, node_right = [], [], [], []

    def new_node() -> int:
        node_min.append(None)
        node_max.append(None)
        node_left.append(0)
        node_right.append(0)
        return len(node_left) - 1

    stack = [(new_node(), 0, nf)]
    while stack:
        node, lo, hi = stack.pop()
        seg = order[lo:hi]
        node_min[node] = tmin[seg].min(axis=0)
        node_max[node] = tmax[seg].max(axis=0)
        count = hi - lo
        extent = cent[seg].max(axis=0) - cent[seg].min(axis=0)
        if count <= _BVH_LEAF_SIZE or extent.max() <= 0.0:
            node_left[node] = -(lo + 1)
            node_right[node] = count
            continue
        axis = int(np.argmax(extent))
        order[lo:hi] = seg[np.argsort(cent[seg, axis], kind="stable")]
        mid = (lo + hi) // 2
        left = new_node()
        right = new_node()
        node_left[node] = left
        node_right[node] = right
        stack.append((left, lo, mid))
        stack.append((right, mid, hi))

    return VisibilityIndex(
        tri=tri,
        node_min=np.ascontiguousarray(node_min, np.float64),
        node_max=np.ascontiguousarray(node_max, np.float64),
        node_left=np.asarray(node_left, np.int64),
        node_right=np.asarray(node_right, np.int64),
        order=order,
    )


def nearest_hit(index: VisibilityIndex, origins, directions):
    """Nearest (distance, face) along each ray; (inf, -1) on miss."""
    origins = np.ascontiguousarray(np.asarray(origins, np.float64).reshape(-1, 3))
    directions = np.ascontiguousarray(np.asarray(directions, np.float64).reshape(-1, 3))
    return bvh_nearest_batch(index.tri, index.node_min, index.node_max,
                             index.node_left, index.node_right, index.order,
                             origins, directions)


def brute_nearest(index: VisibilityIndex, origins, directions):
    """All-triangle scan with identical hit math; the oracle twin of nearest_hit."""
    origins = np.ascontiguousarray(np.asarray(origins, np.float64).reshape(-1, 3))
    directions = np.ascontiguousarray(np.asarray(directions, np.float64).reshape(-1, 3))
    return brute_nearest_batch(index.tri, origins, directions)


def _points_unobstructed(index: VisibilityIndex, origin: np.ndarray,
                         points: np.ndarray) -> np.ndarray:
    origin = np.ascontiguousarray(origin, np.float64)
    points = np.ascontiguousarray(points, np.float64)
    return occlusion_batch(index.tri, index.node_min, index.node_max,
                           index.node_left, index.node_right, index.order,
                           origin, points, VISIBILITY_REL_EPS)


def texel_visible(index: VisibilityIndex, point, face: int, pose: CameraPose) -> bool:
    """True iff the camera ray reaches the texel point first and it lands in frame.

    The nearest hit may be the texel's own face or any surface within a
    relative distance epsilon of the texel (seam-adjacent faces qualify).
    """
    point = np.asarray(point, np.float64).reshape(3)
    xy, z = project_points(pose, point.reshape(1, 3))
    if z[0] <= 0.0:
        return False
    x, y = xy[0]
    if not (0.0 <= x < pose.width and 0.0 <= y < pose.height):
        return False
    return bool(_points_unobstructed(index, pose.position, point.reshape(1, 3))[0])


# ---------------------------------------------------------------------------
# texel table: UV-space rasterization of the mesh at atlas resolution


@dataclass(frozen=True)
class TexelTable:
    """Per-texel owning face, barycentric weights, world point, and normal.

    Coverage is conservative: after rasterizing UV triangles over texel
    centers, ownership is dilated by one texel (clamped barycentrics keep the
    world point on the owning face) so bilinear lookups at chart borders do
    not bleed unfilled texels.
    """

    width: int
    height: int
    covered: np.ndarray   # (H, W) bool
    rows: np.ndarray      # (K,)
    cols: np.ndarray      # (K,)
    faces: np.ndarray     # (K,) int32
    bary: np.ndarray      # (K, 3) float64
    points: np.ndarray    # (K, 3) float64
    normals: np.ndarray   # (K, 3) float64, unit

    def rotated(self, rot: Rotation) -> "TexelTable":
        m = rot.as_matrix()
        return TexelTable(self.width, self.height, self.covered, self.rows,
                          self.cols, self.faces, self.bary,
                          self.points @ m.T, self.normals @ m.T)


def _shift(arr: np.ndarray, dy: int, dx: int, fill):
    out = np.full_like(arr, fill)
    h, w = arr.shape[:2]
    ys = slice(max(dy, 0), h + min(dy, 0))
    yd = slice(max(-dy, 0), h + min(-dy, 0))
    xs = slice(max(dx, 0), w + min(dx, 0))
    xd = slice(max(-dx, 0), w + min(-dx, 0))
    out[yd, xd] = arr[ys, xs]
    return out


def build_texel_table(mesh: TriangleMesh, atlas_size) -> TexelTable:
    if not mesh.has_uvs:
        raise MissingUVsError("texel table requires a UV parameterization")
    w, h = (atlas_size, atlas_size) if isinstance(atlas_size, int) else atlas_size
    fuv = mesh.face_uvs()                                     # (F, 3, 2)
    tri_xy = np.empty((fuv.shape[0], 3, 2), np.float64)
    tri_xy[..., 0] = fuv[..., 0] * w
    tri_xy[..., 1] = (1.0 - fuv[..., 1]) * h
    ones = np.ones((fuv.shape[0], 3), np.float64)
    face, _, b0, b1 = rasterize_triangles(np.ascontiguousarray(tri_xy), ones, w, h)

    bary_map = np.zeros((h, w, 3), np.float64)
    strict = face >= 0
    bary_map[strict] = np.stack([b0[strict], b1[strict],
                                 1.0 - b0[strict] - b1[strict]], axis=1)

    # one-texel dilation of face ownership, fixed neighbor priority
    grown = face.copy()
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)):
        nb = _shift(face, dy, dx, -1)
        take = (grown < 0) & (nb >= 0)
        grown[take] = nb[take]
    dilated = (face < 0) & (grown >= 0)
    if dilated.any():
        rows_d, cols_d = np.nonzero(dilated)
        centers = np.stack([(cols_d + 0.5) / w, 1.0 - (rows_d + 0.5) / h], axis=1)
        bary_map[dilated] = _clamped_barycentric(fuv[grown[dilated]], centers)

    covered = grown >= 0
    rows, cols = np.nonzero(covered)
    faces = grown[covered].astype(np.int32)
    bary = bary_map[covered]
    pos = mesh.positions[mesh.faces[faces, :, 0]]             # (K, 3, 3)
    nrm = mesh.normals[mesh.faces[faces, :, 1]]
    points = np.einsum("kc,kcd->kd", bary, pos)
    normals = np.einsum("kc,kcd->kd", bary, nrm)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    normals = np.divide(normals, lengths, out=np.zeros_like(normals), where=lengths > 1e-20)
    normals[lengths[:, 0] <= 1e-20] = (0.0, 0.0, 1.0)
    return TexelTable(w, h, covered, rows, cols, faces, bary, points, normals)


def _clamped_barycentric(tri_uv: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Barycentric coords of pts in UV triangles, clamped onto the simplex."""
    e1 = tri_uv[:, 1] - tri_uv[:, 0]
    e2 = tri_uv[:, 2] - tri_uv[:, 0]
    d = pts - tri_uv[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    safe = np.abs(det) > 1e-18
    det_safe = np.where(safe, det, 1.0)
    b1 = (d[:, 0] * e2[:, 1] - d[:, 1] * e2[:, 0]) / det_safe
    b2 = (e1[:, 0] * d[:, 1] - e1[:, 1] * d[:, 0]) / det_safe
    b = np.stack([1.0 - b1 - b2, b1, b2], axis=1)
    b[~safe] = (1.0, 0.0, 0.0)
    b = np.maximum(b, 0.0)
    b /= b.sum(axis=1, keepdims=True)
    return b


def uv_occupancy(mesh: TriangleMesh, atlas_size) -> np.ndarray:
    """Boolean grid of texels owned by the UV layout (dilation included)."""
    return build_texel_table(mesh, atlas_size).covered


# ---------------------------------------------------------------------------
# back-projection


def bake_frame(mesh: TriangleMesh, index: VisibilityIndex, frame_color: np.ndarray,
               frame_gbuffer: GBuffer, pose: CameraPose, atlas_size=1024,
               penalty_scale: float = 8.0, *, table: TexelTable | None = None,
               return_weights: bool = False):
    """Back-project one frame: (weighted color grid, weight grid).

    Each visible texel contributes weight S = angle * (1 - depth_penalty)
    and color S * sample, where the sample is a bilinear read of the frame at
    the texel's projection and the penalty is evaluated at the projected
    pixel of the pose's depth raster.  Occluded, back-facing, off-frame, and
    out-of-mask texels contribute nothing.
    """
    if not mesh.has_uvs:
        raise MissingUVsError("baking requires a UV parameterization")
    if table is None:
        table = build_texel_table(mesh, atlas_size)
    fc = np.asarray(frame_color, np.float64)
    if fc.shape[:2] != (pose.height, pose.width) or fc.shape[:2] != frame_gbuffer.mask.shape:
        raise InputError("frame color, g-buffer, and pose resolutions disagree")

    csum = np.zeros((table.height, table.width, 3))
    wsum = np.zeros((table.height, table.width))
    empty = BakeWeights(*(np.empty(0, np.int64) for _ in range(2)),
                        *(np.empty(0, np.float64) for _ in range(3)))
    if table.points.shape[0] == 0:
        return (csum, wsum, empty) if return_weights else (csum, wsum)

    xy, z = project_points(pose, table.points)
    view = pose.position - table.points
    dist = np.linalg.norm(view, axis=1, keepdims=True)
    lam_a = angle_weight(table.normals, view / np.maximum(dist, 1e-300))

    ix = np.floor(xy[:, 0]).astype(np.int64)
    iy = np.floor(xy[:, 1]).astype(np.int64)
    cand = (z > 0) & (lam_a > 0) & (ix >= 0) & (ix < pose.width) & (iy >= 0) & (iy < pose.height)
    cand[cand] &= frame_gbuffer.mask[iy[cand], ix[cand]]
    if cand.any():
        vis = _points_unobstructed(index, pose.position, table.points[cand])
        keep = np.flatnonzero(cand)[vis]
    else:
        keep = np.empty(0, np.int64)
    if keep.size == 0:
        return (csum, wsum, empty) if return_weights else (csum, wsum)

    lam_d_map = depth_penalty_map(frame_gbuffer.depth, penalty_scale)
    lam_d = lam_d_map[iy[keep], ix[keep]]
    s = lam_a[keep] * (1.0 - lam_d)
    sample = bilinear_pixels(fc, xy[keep, 0] - 0.5, xy[keep, 1] - 0.5)
    rows = table.rows[keep]
    cols = table.cols[keep]
    csum[rows, cols] = s[:, None] * sample
    wsum[rows, cols] = s
    if return_weights:
        return csum, wsum, BakeWeights(rows, cols, lam_a[keep], lam_d, s)
    return csum, wsum


def bake_video(mesh: TriangleMesh, frames, trajectory, atlas_size=1024,
               penalty_scale: float = 8.0, *, index: VisibilityIndex | None = None,
               table: TexelTable | None = None) -> TextureAtlas:
    """Weighted summation of per-frame back-projections into one atlas.

    frames: iterable of (color raster, GBuffer) pairs, or of GBuffers whose
    color channel is filled; consumed lazily, one frame held at a time.  The
    confidence map is the plain sum of the per-frame weights, accumulated in
    frame order.
    """
    poses = list(getattr(trajectory, "poses", trajectory))
    if index is None:
        index = build_visibility(mesh)
    if table is None:
        table = build_texel_table(mesh, atlas_size)
    csum = np.zeros((table.height, table.width, 3))
    wsum = np.zeros((table.height, table.width))
    it = iter(frames)
    for t, pose in enumerate(poses):
        try:
            frame = next(it)
        except StopIteration:
            raise InputError(f"{t} frames but {len(poses)} trajectory poses") from None
        color, gbuf = (frame.color, frame) if isinstance(frame, GBuffer) else tuple(frame)
        if color is None:
            raise InputError("frame without a color raster cannot be baked")
        c, s = bake_frame(mesh, index, color, gbuf, pose, atlas_size,
                          penalty_scale, table=table)
        csum += c
        wsum += s
    if next(it, None) is not None:
        raise InputError(f"more frames than the {len(poses)} trajectory poses")
    color = np.divide(csum, wsum[..., None], out=np.zeros_like(csum),
                      where=wsum[..., None] > 0)
    return TextureAtlas(np.clip(color, 0.0, 1.0), wsum)


# ---------------------------------------------------------------------------
# atlas files


_CONF_MAGIC = b"CONF"


def save_atlas(atlas: TextureAtlas, out_dir, *, write_16bit: bool = False) -> None:
    """Write color.png, confidence.bin (+preview), optionally color16.png."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _png.write_color_png(out_dir / "color.png", atlas.color)
    if write_16bit:
        _png.write_color16_png(out_dir / "color16.png", atlas.color)
    w, h = atlas.resolution
    cmax = float(atlas.confidence.max())
    header = struct.pack("<4sIIf", _CONF_MAGIC, w, h, cmax)
    payload = atlas.confidence.astype("<f4").tobytes(order="C")
    (out_dir / "confidence.bin").write_bytes(header + payload)
    preview = atlas.confidence / cmax if cmax > 0 else atlas.confidence
    _png.write_gray16_png(out_dir / "confidence_preview.png", np.clip(preview, 0.0, 1.0))


def load_atlas(atlas_dir) -> TextureAtlas:
    atlas_dir = Path(atlas_dir)
    blob = (atlas_dir / "confidence.bin").read_bytes()
    if len(blob) < 16:
        raise InputError(f"{atlas_dir}: truncated confidence grid")
    magic, w, h, _cmax = struct.unpack_from("<4sIIf", blob, 0)
    if magic != _CONF_MAGIC:
        raise InputError(f"{atlas_dir}: bad confidence grid magic {magic!r}")
    conf = np.frombuffer(blob, dtype="<f4", count=w * h, offset=16).reshape(h, w).astype(np.float64)
    if (atlas_dir / "color16.png").exists():
        color = _png.read_color16_png(atlas_dir / "color16.png")
    else:
        color = _png.read_color_png(atlas_dir / "color.png")
    if color.shape[:2] != (h, w):
        raise InputError(f"{atlas_dir}: color/confidence resolution mismatch")
    color = color.copy()
    color[conf == 0] = 0.0
    return TextureAtlas(color, conf)

"""Triangle meshes with UVs: loading, validation, normalization, rigid rotation.

Meshes keep separate index spaces for positions, normals, and UVs (the OBJ
convention); every operation returns a new mesh and never mutates its input.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateMeshError, MeshFormatError

UNIT_NORMAL_TOL = 1e-4


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TriangleMesh:
    """Indexed triangle mesh.

    faces[f, corner] = (position index, normal index, uv index).  The uv
    index is -1 on all corners of a face without UVs; a mesh is bakeable
    only when every corner of every face carries a UV (see has_uvs).
    """

    positions: np.ndarray  # (P, 3) float64
    normals: np.ndarray    # (N, 3) float64, unit length
    uvs: np.ndarray        # (U, 2) float64 inside [0, 1]^2
    faces: np.ndarray      # (F, 3, 3) int32

    def __post_init__(self):
        object.__setattr__(self, "positions", _frozen(np.asarray(self.positions, np.float64).reshape(-1, 3)))
        object.__setattr__(self, "normals", _frozen(np.asarray(self.normals, np.float64).reshape(-1, 3)))
        object.__setattr__(self, "uvs", _frozen(np.asarray(self.uvs, np.float64).reshape(-1, 2)))
        object.__setattr__(self, "faces", _frozen(np.asarray(self.faces, np.int32).reshape(-1, 3, 3)))
        self._validate()

    def _validate(self):
        if self.faces.shape[0] == 0:
            raise DegenerateMeshError("mesh has zero faces")
        for name, arr in (("positions", self.positions), ("normals", self.normals), ("uvs", self.uvs)):
            if arr.size and not np.isfinite(arr).all():
                raise MeshFormatError(f"non-finite values in {name}")
        pi, ni, ti = self.faces[..., 0], self.faces[..., 1], self.faces[..., 2]
        if pi.min() < 0 or pi.max() >= len(self.positions):
            raise MeshFormatError("face position index out of range")
        if ni.min() < 0 or ni.max() >= len(self.normals):
            raise MeshFormatError("face normal index out of range")
        if ti.max() >= max(len(self.uvs), 1):
            raise MeshFormatError("face uv index out of range")
        if ti.min() < -1:
            raise MeshFormatError("face uv index out of range")
        if self.normals.size:
            lengths = np.linalg.norm(self.normals, axis=1)
            if np.abs(lengths - 1.0).max() > UNIT_NORMAL_TOL:
                raise MeshFormatError("normals are not unit length")
        if self.uvs.size and (self.uvs.min() < -1e-9 or self.uvs.max() > 1.0 + 1e-9):
            raise MeshFormatError("uv coordinates outside [0, 1]^2")

    @property
    def num_faces(self) -> int:
        return self.faces.shape[0]

    @property
    def has_uvs(self) -> bool:
        """True when every corner of every face references a UV coordinate."""
        return bool(self.uvs.size) and bool((self.faces[..., 2] >= 0).all())

    def face_positions(self) -> np.ndarray:
        """(F, 3, 3) world coordinates of each face's corners."""
        return self.positions[self.faces[..., 0]]

    def face_normals_at_corners(self) -> np.ndarray:
        return self.normals[self.faces[..., 1]]

    def face_uvs(self) -> np.ndarray:
        if not self.has_uvs:
            raise MeshFormatError("mesh carries no UV parameterization")
        return self.uvs[self.faces[..., 2]]

    def bounding_radius(self) -> float:
        return float(np.linalg.norm(self.positions, axis=1).max())


@dataclass(frozen=True)
class Rotation:
    """Rigid rotation about the origin, stored as a unit quaternion (w, x, y, z).

    yaw_index / pitch_index record the grid cell the rotation was drawn from
    when it belongs to a discrete candidate set; they do not affect behavior.
    """

    quat: np.ndarray
    yaw_index: int | None = None
    pitch_index: int | None = None

    def __post_init__(self):
        q = np.asarray(self.quat, np.float64).reshape(4)
        n = float(np.linalg.norm(q))
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} is not 1 within 1e-6")
        object.__setattr__(self, "quat", _frozen(q / n))

    @staticmethod
    def identity() -> "Rotation":
        return Rotation(np.array([1.0, 0.0, 0.0, 0.0]))

    @staticmethod
    def from_axis_angle(axis, angle: float) -> "Rotation":
        axis = np.asarray(axis, np.float64).reshape(3)
        n = np.linalg.norm(axis)
        if n == 0:
            raise ValueError("zero rotation axis")
        axis = axis / n
        half = 0.5 * float(angle)
        return Rotation(np.concatenate([[np.cos(half)], np.sin(half) * axis]))

    @staticmethod
    def from_yaw_pitch(yaw: float, pitch: float,
                       yaw_index: int | None = None,
                       pitch_index: int | None = None) -> "Rotation":
        """Pitch about +y first, then yaw about the world up axis +z."""
        ry = Rotation.from_axis_angle([0.0, 1.0, 0.0], pitch)
        rz = Rotation.from_axis_angle([0.0, 0.0, 1.0], yaw)
        q = _quat_mul(rz.quat, ry.quat)
        return Rotation(q, yaw_index=yaw_index, pitch_index=pitch_index)

    def inverse(self) -> "Rotation":
        w, x, y, z = self.quat
        return Rotation(np.array([w, -x, -y, -z]))

    def compose(self, other: "Rotation") -> "Rotation":
        """Rotation equal to applying `other` first, then self."""
        return Rotation(_quat_mul(self.quat, other.quat))

    def as_matrix(self) -> np.ndarray:
        w, x, y, z = self.quat
        return np.array([
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ])

    def apply(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, np.float64) @ self.as_matrix().T


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


# ---------------------------------------------------------------------------
# operations


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Center the bounding box on the origin and scale the farthest vertex to radius 1."""
    center = 0.5 * (mesh.positions.min(axis=0) + mesh.positions.max(axis=0))
    shifted = mesh.positions - center
    radius = float(np.linalg.norm(shifted, axis=1).max())
    if radius < 1e-12:
        raise DegenerateMeshError("mesh has zero bounding-sphere radius")
    return TriangleMesh(shifted / radius, mesh.normals, mesh.uvs, mesh.faces)


def rotate_mesh(mesh: TriangleMesh, rot: Rotation) -> TriangleMesh:
    """Rotate positions and normals rigidly; UVs and topology are untouched."""
    m = rot.as_matrix()
    return TriangleMesh(mesh.positions @ m.T, mesh.normals @ m.T, mesh.uvs, mesh.faces)


def compute_vertex_normals(positions: np.ndarray, faces_pos: np.ndarray) -> np.ndarray:
    """Area-weighted per-vertex normals for position-indexed triangles (F, 3)."""
    p = positions[faces_pos]
    fn = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])  # length = 2 * area
    acc = np.zeros_like(positions)
    for c in range(3):
        np.add.at(acc, faces_pos[:, c], fn)
    lengths = np.linalg.norm(acc, axis=1, keepdims=True)
    out = np.divide(acc, lengths, out=np.zeros_like(acc), where=lengths > 1e-20)
    out[lengths[:, 0] <= 1e-20] = (0.0, 0.0, 1.0)
    return out


def load_mesh(path) -> TriangleMesh:
    """Load a Wavefront OBJ or binary glTF mesh.

    Missing normals are synthesized as area-weighted per-vertex normals.
    A mesh without UVs loads fine but has_uvs is False (baking rejects it).
    """
    path = Path(path)
    if not path.is_file():
        raise MeshFormatError(f"cannot read mesh file: {path}")
    suffix = path.suffix.lower()
    if suffix == ".obj":
        return _load_obj(path)
    if suffix == ".glb":
        return _load_glb(path)
    raise MeshFormatError(f"unsupported mesh format '{suffix}' (expected .obj or .glb)")


def _load_obj(path: Path) -> TriangleMesh:
    positions, normals, uvs, faces = [], [], [], []
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as e:
        raise MeshFormatError(f"cannot read mesh file: {path}: {e}") from e
    for lineno, raw in enumerate(text.splitlines(), 1):
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        head = parts[0]
        try:
            if head == "v":
                positions.append([float(x) for x in parts[1:4]])
            elif head == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif head == "vt":
                uvs.append([float(x) for x in parts[1:3]])
            elif head == "f":
                corners = [_parse_obj_corner(tok, len(positions), len(uvs), len(normals))
                           for tok in parts[1:]]
                if len(corners) < 3:
                    raise ValueError("face with fewer than 3 corners")
                for i in range(1, len(corners) - 1):  # fan-triangulate n-gons
                    faces.append([corners[0], corners[i], corners[i + 1]])
        except (ValueError, IndexError) as e:
            raise MeshFormatError(f"{path}:{lineno}: malformed OBJ line: {e}") from e
    return _assemble(np.asarray(positions, np.float64).reshape(-1, 3),
                     np.asarray(normals, np.float64).reshape(-1, 3),
                     np.asarray(uvs, np.float64).reshape(-1, 2),
                     faces, str(path))


def _parse_obj_corner(token: str, np_, nt, nn):
    fields = token.split("/")
    vi = int(fields[0])
    ti = int(fields[1]) if len(fields) > 1 and fields[1] else 0
    ni = int(fields[2]) if len(fields) > 2 and fields[2] else 0
    # OBJ indices are 1-based; negative indices count from the end
    vi = vi - 1 if vi > 0 else np_ + vi
    ti = ti - 1 if ti > 0 else (nt + ti if ti < 0 else -1)
    ni = ni - 1 if ni > 0 else (nn + ni if ni < 0 else -1)
    return (vi, ni, ti)


def _assemble(positions, normals, uvs, corner_faces, origin: str) -> TriangleMesh:
    if not corner_faces:
        raise DegenerateMeshError(f"{origin}: mesh has zero faces")
    faces = np.asarray(corner_faces, np.int64)  # (F, 3, 3) as (pos, normal, uv)
    if positions.size == 0:
        raise MeshFormatError(f"{origin}: no vertex positions")
    if faces[..., 0].min() < 0 or faces[..., 0].max() >= len(positions):
        raise MeshFormatError(f"{origin}: face position index out of range")
    have_n = faces[..., 1] >= 0
    if have_n.any() and faces[..., 1].max() >= max(len(normals), 1):
        raise MeshFormatError(f"{origin}: face normal index out of range")
    have_t = faces[..., 2] >= 0
    if have_t.any() and faces[..., 2].max() >= max(len(uvs), 1):
        raise MeshFormatError(f"{origin}: face uv index out of range")
    if not have_n.all():
        # synthesize normals for the whole mesh, indexed like positions
        normals = compute_vertex_normals(positions, faces[..., 0].astype(np.int64))
        faces = faces.copy()
        faces[..., 1] = faces[..., 0]
    else:
        lengths = np.linalg.norm(normals, axis=1, keepdims=True)
        if (lengths < 1e-12).any():
            raise MeshFormatError(f"{origin}: zero-length normal")
        normals = normals / lengths
    if not have_t.all():
        faces = faces.copy()
        faces[..., 2] = -1  # partial UVs: treat the mesh as non-bakeable
        if not have_t.any():
            uvs = np.zeros((0, 2))
    uvs = np.clip(uvs, 0.0, 1.0) if uvs.size else uvs
    return TriangleMesh(positions, normals, uvs, faces)


_GLB_MAGIC = 0x46546C67  # "glTF"
_COMPONENT_DTYPES = {5120: np.int8, 5121: np.uint8, 5122: np.int16,
                     5123: np.uint16, 5125: np.uint32, 5126: np.float32}
_TYPE_WIDTHS = {"SCALAR": 1, "VEC2": 2, "VEC3": 3, "VEC4": 4}


def _load_glb(path: Path) -> TriangleMesh:
    blob = path.read_bytes()
    if len(blob) < 12:
        raise MeshFormatError(f"{path}: truncated GLB header")
    magic, version, length = struct.unpack_from("<III", blob, 0)
    if magic != _GLB_MAGIC:
        raise MeshFormatError(f"{path}: not a binary glTF file")
    if version != 2:
        raise MeshFormatError(f"{path}: unsupported glTF version {version}")
    offset, gltf, binary = 12, None, b""
    while offset < min(length, len(blob)):
        chunk_len, chunk_type = struct.unpack_from("<II", blob, offset)
        chunk = blob[offset + 8: offset + 8 + chunk_len]
        if chunk_type == 0x4E4F534A:  # JSON
            try:
                gltf = json.loads(chunk.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as e:
                raise MeshFormatError(f"{path}: bad glTF JSON chunk: {e}") from e
        elif chunk_type == 0x004E4942:  # BIN
            binary = chunk
        offset += 8 + chunk_len + (-chunk_len % 4 if chunk_len % 4 else 0)
    if gltf is None:
        raise MeshFormatError(f"{path}: GLB has no JSON chunk")

    prim = _first_scene_primitive(gltf, path)
    attrs = prim.get("attributes", {})
    if "POSITION" not in attrs:
        raise MeshFormatError(f"{path}: primitive lacks POSITION attribute")

    def read(accessor_index):
        return _read_accessor(gltf, binary, accessor_index, path)

    positions = read(attrs["POSITION"]).astype(np.float64)
    normals = read(attrs["NORMAL"]).astype(np.float64) if "NORMAL" in attrs else None
    uvs = read(attrs["TEXCOORD_0"]).astype(np.float64) if "TEXCOORD_0" in attrs else None
    if "indices" in prim:
        idx = read(prim["indices"]).astype(np.int64).reshape(-1)
    else:
        idx = np.arange(len(positions), dtype=np.int64)
    if prim.get("mode", 4) != 4:
        raise MeshFormatError(f"{path}: only triangle primitives are supported")
    if len(idx) % 3:
        raise MeshFormatError(f"{path}: index count not divisible by 3")
    tri = idx.reshape(-1, 3)
    faces = np.stack([tri,
                      tri if normals is not None else np.full_like(tri, -1),
                      tri if uvs is not None else np.full_like(tri, -1)], axis=-1)
    return _assemble(positions,
                     normals if normals is not None else np.zeros((0, 3)),
                     np.clip(uvs, 0.0, 1.0) if uvs is not None else np.zeros((0, 2)),
                     faces.tolist(), str(path))


def _first_scene_primitive(gltf: dict, path: Path) -> dict:
    scenes = gltf.get("scenes", [])
    nodes = gltf.get("nodes", [])
    meshes = gltf.get("meshes", [])
    scene = scenes[gltf.get("scene", 0)] if scenes else {"nodes": list(range(len(nodes)))}
    stack = list(scene.get("nodes", []))
    while stack:
        node = nodes[stack.pop(0)]
        if "mesh" in node:
            prims = meshes[node["mesh"]].get("primitives", [])
            if prims:
                return prims[0]
        stack = list(node.get("children", [])) + stack
    raise MeshFormatError(f"{path}: no mesh primitive in first scene")


def _read_accessor(gltf: dict, binary: bytes, index: int, path: Path) -> np.ndarray:
    try:
        acc = gltf["accessors"][index]
        view = gltf["bufferViews"][acc["bufferView"]]
    except (KeyError, IndexError) as e:
        raise MeshFormatError(f"{path}: bad accessor reference: {e}") from e
    dtype = _COMPONENT_DTYPES.get(acc["componentType"])
    width = _TYPE_WIDTHS.get(acc["type"])
    if dtype is None or width is None:
        raise MeshFormatError(f"{path}: unsupported accessor layout")
    count = acc["count"]
    start = view.get("byteOffset", 0) + acc.get("byteOffset", 0)
    item = np.dtype(dtype).itemsize * width
    stride = view.get("byteStride", item)
    if stride == item:
        data = np.frombuffer(binary, dtype=dtype, count=count * width, offset=start)
    else:
        rows = [np.frombuffer(binary, dtype=dtype, count=width, offset=start + i * stride)
                for i in range(count)]
        data = np.concatenate(rows)
    return data.reshape(count, width) if width > 1 else data.reshape(count)

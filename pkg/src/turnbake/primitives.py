"""Procedural UV-mapped meshes and texture patterns for demos and tests."""
from __future__ import annotations

import math

import numpy as np

from .bake import TextureAtlas
from .mesh import TriangleMesh


def make_quad(side: float = 1.0) -> TriangleMesh:
    """Square in the xz-plane at y=0, normals -y, identity UV map."""
    h = side / 2.0
    positions = np.array([[-h, 0.0, -h], [h, 0.0, -h], [h, 0.0, h], [-h, 0.0, h]])
    normals = np.array([[0.0, -1.0, 0.0]])
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    faces = np.array([
        [(0, 0, 0), (1, 0, 1), (2, 0, 2)],
        [(0, 0, 0), (2, 0, 2), (3, 0, 3)],
    ])
    return TriangleMesh(positions, normals, uvs, faces)


def make_cube(side: float = 1.0) -> TriangleMesh:
    """Axis-aligned cube centered at the origin; each face owns a UV tile."""
    h = side / 2.0
    positions = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)])
    # (normal, four corner position indices counterclockwise seen from outside)
    sides = [
        ((1, 0, 0), (4, 6, 7, 5)),
        ((-1, 0, 0), (2, 0, 1, 3)),
        ((0, 1, 0), (6, 2, 3, 7)),
        ((0, -1, 0), (0, 4, 5, 1)),
        ((0, 0, 1), (1, 5, 7, 3)),
        ((0, 0, -1), (4, 0, 2, 6)),
    ]
    normals = np.array([s[0] for s in sides], np.float64)
    uvs, faces = [], []
    inset = 0.02
    for fi, (_, quad) in enumerate(sides):
        tx, ty = fi % 3, fi // 3
        u0, v0 = tx / 3.0 + inset, ty / 2.0 + inset
        u1, v1 = (tx + 1) / 3.0 - inset, (ty + 1) / 2.0 - inset
        base = len(uvs)
        uvs += [[u0, v0], [u1, v0], [u1, v1], [u0, v1]]
        a, b, c, d = quad
        faces.append([(a, fi, base), (b, fi, base + 1), (c, fi, base + 2)])
        faces.append([(a, fi, base), (c, fi, base + 2), (d, fi, base + 3)])
    return TriangleMesh(positions, normals, np.array(uvs), np.array(faces))


def make_uv_sphere(n_lat: int = 32, n_lon: int = 64, radius: float = 1.0,
                   v_mapping: str = "latlong") -> TriangleMesh:
    """Lat-long sphere with a duplicated seam column and per-column pole vertices.

    v_mapping picks how latitude maps to the v axis: "latlong" (uniform in
    polar angle), "area" (Lambert equal-area, texel count proportional to
    surface area), or "polar_compressed" (sub-area polar caps, a common
    layout choice when poles carry little visual detail).
    """
    ii, jj = np.meshgrid(np.arange(n_lat + 1), np.arange(n_lon + 1), indexing="ij")
    theta = math.pi * ii / n_lat           # polar angle from +z
    phi = 2.0 * math.pi * jj / n_lon
    x = np.sin(theta) * np.cos(phi)
    y = np.sin(theta) * np.sin(phi)
    z = np.cos(theta)
    positions = radius * np.stack([x, y, z], axis=-1).reshape(-1, 3)
    normals = np.stack([x, y, z], axis=-1).reshape(-1, 3)
    if v_mapping == "latlong":
        v = 1.0 - ii / n_lat
    elif v_mapping == "area":
        v = 0.5 * (1.0 + np.cos(theta))
    elif v_mapping == "polar_compressed":
        c = np.cos(theta)
        v = 0.5 * (1.0 + np.sign(c) * np.sqrt(np.abs(c)))
    else:
        raise ValueError(f"unknown v_mapping '{v_mapping}'")
    uvs = np.stack([jj / n_lon, v], axis=-1).reshape(-1, 2)

    def vid(i, j):
        return i * (n_lon + 1) + j

    faces = []  # wound counterclockwise seen from outside
    for i in range(n_lat):
        for j in range(n_lon):
            a, b = vid(i, j), vid(i, j + 1)
            c, d = vid(i + 1, j + 1), vid(i + 1, j)
            if i > 0:  # collapses at the top pole where a == b
                faces.append([(a, a, a), (c, c, c), (b, b, b)])
            if i < n_lat - 1:  # collapses at the bottom pole where c == d
                faces.append([(a, a, a), (d, d, d), (c, c, c)])
    return TriangleMesh(positions, normals, uvs, np.array(faces))


def make_mug(n_seg: int = 48, n_height: int = 8, handle_seg: int = 24,
             handle_tube: int = 10) -> TriangleMesh:
    """Closed cylinder with a half-torus handle; the gap between handle and
    body is self-occluded from a horizontal orbit, which is what makes this
    fixture useful for refinement tests."""
    body_r, half_h = 0.55, 0.6
    positions, normals, uvs, faces = [], [], [], []

    def add_vertex(p, n, uv):
        positions.append(p)
        normals.append(n)
        uvs.append(uv)
        return len(positions) - 1

    def tri(a, b, c):
        faces.append([(a, a, a), (b, b, b), (c, c, c)])

    # side wall: chart u in [0.01, 0.49], v in [0.51, 0.99]
    ring = []
    for hi in range(n_height + 1):
        z = -half_h + 2.0 * half_h * hi / n_height
        row = []
        for si in range(n_seg + 1):
            phi = 2.0 * math.pi * si / n_seg
            n = (math.cos(phi), math.sin(phi), 0.0)
            uv = (0.01 + 0.48 * si / n_seg, 0.51 + 0.48 * hi / n_height)
            row.append(add_vertex((body_r * n[0], body_r * n[1], z), n, uv))
        ring.append(row)
    for hi in range(n_height):
        for si in range(n_seg):
            a, b = ring[hi][si], ring[hi][si + 1]
            c, d = ring[hi + 1][si + 1], ring[hi + 1][si]
            tri(a, b, c)
            tri(a, c, d)

    # caps: polar discs at (0.25, 0.25) and (0.75, 0.25), radius 0.22
    for sign, cu, cv in ((1.0, 0.25, 0.25), (-1.0, 0.75, 0.25)):
        n = (0.0, 0.0, sign)
        center = add_vertex((0.0, 0.0, sign * half_h), n, (cu, cv))
        rim = []
        for si in range(n_seg + 1):
            phi = 2.0 * math.pi * si / n_seg
            uv = (cu + 0.22 * math.cos(phi), cv + 0.22 * math.sin(phi))
            rim.append(add_vertex((body_r * math.cos(phi), body_r * math.sin(phi),
                                   sign * half_h), n, uv))
        for si in range(n_seg):
            if sign > 0:
                tri(center, rim[si], rim[si + 1])
            else:
                tri(center, rim[si + 1], rim[si])

    # handle: half torus in the xz-plane, chart u in [0.51, 0.99], v in [0.51, 0.99]
    arc_c = np.array([body_r + 0.12, 0.0, 0.0])
    arc_r, tube_r = 0.32, 0.07
    grid = []
    for ai in range(handle_seg + 1):
        alpha = math.radians(-95.0 + 190.0 * ai / handle_seg)
        ca, sa = math.cos(alpha), math.sin(alpha)
        arc_p = arc_c + arc_r * np.array([ca, 0.0, sa])
        radial = np.array([ca, 0.0, sa])          # outward in the arc plane
        side = np.array([0.0, 1.0, 0.0])
        row = []
        for ti in range(handle_tube + 1):
            beta = 2.0 * math.pi * ti / handle_tube
            n = math.cos(beta) * radial + math.sin(beta) * side
            p = arc_p + tube_r * n
            uv = (0.51 + 0.48 * ai / handle_seg, 0.51 + 0.48 * ti / handle_tube)
            row.append(add_vertex(tuple(p), tuple(n), uv))
        grid.append(row)
    for ai in range(handle_seg):
        for ti in range(handle_tube):
            a, b = grid[ai][ti], grid[ai][ti + 1]
            c, d = grid[ai + 1][ti + 1], grid[ai + 1][ti]
            tri(a, b, c)
            tri(a, c, d)

    return TriangleMesh(np.array(positions), np.array(normals),
                        np.clip(np.array(uvs), 0.0, 1.0), np.array(faces))


def checkerboard(size: int = 1024, cells: int = 16,
                 color_a=(0.92, 0.16, 0.12), color_b=(0.10, 0.32, 0.88)) -> np.ndarray:
    """(size, size, 3) checker pattern in [0, 1]."""
    idx = np.arange(size) * cells // size
    parity = (idx[:, None] + idx[None, :]) % 2
    out = np.where(parity[..., None] == 0, np.asarray(color_a), np.asarray(color_b))
    return out.astype(np.float64)


def solid_atlas(size: int, color=(0.5, 0.5, 0.5), confidence: float = 1.0) -> TextureAtlas:
    h = w = size
    conf = np.full((h, w), float(confidence))
    col = np.tile(np.asarray(color, np.float64), (h, w, 1))
    if confidence == 0.0:
        col[:] = 0.0
    return TextureAtlas(col, conf)


def checker_atlas(size: int = 1024, cells: int = 16) -> TextureAtlas:
    return TextureAtlas(checkerboard(size, cells), np.ones((size, size)))

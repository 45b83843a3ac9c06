"""Sequential numba kernels: triangle rasterization and ray queries.

Everything here is single-threaded with fastmath off, so results are
bit-reproducible across runs and machines with IEEE-754 doubles.  The BVH
traversal visits nodes whose entry distance equals the current best hit, so
its nearest hit (with lowest-face-index tie break) is identical to a full
scan over all triangles.
"""
from __future__ import annotations

import numpy as np
from numba import njit

RAY_EPS = 1e-9        # minimum accepted hit distance
EDGE_SLACK = 1e-12    # barycentric slack so seam rays hit at least one side


@njit(cache=True)
def rasterize_triangles(tri_xy, tri_z, width, height):
    """Z-buffered rasterization over pixel centers with a top-left fill rule.

    tri_xy: (F, 3, 2) projected corner coordinates in continuous pixel space.
    tri_z:  (F, 3) camera-space corner depths; triangles with any corner at
            depth <= RAY_EPS are skipped entirely (no near-plane clipping).

    Returns (face, depth, b0, b1): winning face index per pixel (-1 empty),
    perspective-correct surface depth, and the perspective-corrected
    barycentric weights of corners 0 and 1.  Faces are processed in index
    order with a strict depth test, so on exact depth ties the lower face
    index wins.
    """
    face = np.full((height, width), -1, np.int32)
    depth = np.full((height, width), np.inf, np.float64)
    b0 = np.zeros((height, width), np.float64)
    b1 = np.zeros((height, width), np.float64)

    for f in range(tri_xy.shape[0]):
        z0 = tri_z[f, 0]
        z1 = tri_z[f, 1]
        z2 = tri_z[f, 2]
        if z0 <= RAY_EPS or z1 <= RAY_EPS or z2 <= RAY_EPS:
            continue
        x0 = tri_xy[f, 0, 0]
        y0 = tri_xy[f, 0, 1]
        x1 = tri_xy[f, 1, 0]
        y1 = tri_xy[f, 1, 1]
        x2 = tri_xy[f, 2, 0]
        y2 = tri_xy[f, 2, 1]
        area2 = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
        if area2 == 0.0:
            continue
        flipped = area2 < 0.0
        if flipped:  # swap corners 1 and 2 so edge functions are >= 0 inside
            x1, x2 = x2, x1
            y1, y2 = y2, y1
            z1, z2 = z2, z1
            area2 = -area2

        lo_x = min(x0, min(x1, x2))
        hi_x = max(x0, max(x1, x2))
        lo_y = min(y0, min(y1, y2))
        hi_y = max(y0, max(y1, y2))
        ix0 = max(int(np.ceil(lo_x - 0.5)), 0)
        ix1 = min(int(np.floor(hi_x - 0.5)), width - 1)
        iy0 = max(int(np.ceil(lo_y - 0.5)), 0)
        iy1 = min(int(np.floor(hi_y - 0.5)), height - 1)
        if ix1 < ix0 or iy1 < iy0:
            continue

        # edge i is opposite corner i; inclusive iff it is a top or left edge
        inc0 = (y2 - y1) < 0.0 or ((y2 - y1) == 0.0 and (x2 - x1) > 0.0)
        inc1 = (y0 - y2) < 0.0 or ((y0 - y2) == 0.0 and (x0 - x2) > 0.0)
        inc2 = (y1 - y0) < 0.0 or ((y1 - y0) == 0.0 and (x1 - x0) > 0.0)

        for iy in range(iy0, iy1 + 1):
            py = iy + 0.5
            for ix in range(ix0, ix1 + 1):
                px = ix + 0.5
                e0 = (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)
                e1 = (x0 - x2) * (py - y2) - (y0 - y2) * (px - x2)
                e2 = (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0)
                if e0 < 0.0 or (e0 == 0.0 and not inc0):
                    continue
                if e1 < 0.0 or (e1 == 0.0 and not inc1):
                    continue
                if e2 < 0.0 or (e2 == 0.0 and not inc2):
                    continue
                cb0 = e0 / area2
                cb1 = e1 / area2
                cb2 = e2 / area2
                denom = cb0 / z0 + cb1 / z1 + cb2 / z2
                if denom <= 0.0:
                    continue
                z = 1.0 / denom
                if z < depth[iy, ix]:
                    depth[iy, ix] = z
                    face[iy, ix] = f
                    pb0 = (cb0 / z0) * z
                    pb1 = (cb1 / z1) * z
                    pb2 = (cb2 / z2) * z
                    b0[iy, ix] = pb0
                    b1[iy, ix] = pb2 if flipped else pb1
    return face, depth, b0, b1


@njit(cache=True)
def _ray_triangle(ox, oy, oz, dx, dy, dz, ax, ay, az, bx, by, bz, cx, cy, cz):
    """Moeller-Trumbore, two-sided.  Returns hit distance or inf."""
    e1x = bx - ax
    e1y = by - ay
    e1z = bz - az
    e2x = cx - ax
    e2y = cy - ay
    e2z = cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if -1e-14 < det < 1e-14:
        return np.inf
    inv = 1.0 / det
    tx = ox - ax
    ty = oy - ay
    tz = oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -EDGE_SLACK or u > 1.0 + EDGE_SLACK:
        return np.inf
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -EDGE_SLACK or u + v > 1.0 + EDGE_SLACK:
        return np.inf
    t = (e2x * qx + e2y * qy + e2z * qz) * inv
    if t <= RAY_EPS:
        return np.inf
    return t


@njit(cache=True)
def _bvh_nearest(tri, node_min, node_max, node_left, node_right, order,
                 ox, oy, oz, dx, dy, dz):
    """Nearest hit (t, original face index) through the BVH; (inf, -1) on miss."""
    stack = np.empty(128, np.int64)
    stack[0] = 0
    sp = 1
    best_t = np.inf
    best_f = -1
    while sp > 0:
        sp -= 1
        node = stack[sp]
        # slab test
        t_lo = RAY_EPS
        t_hi = best_t
        skip = False
        for axis in range(3):
            o = ox if axis == 0 else (oy if axis == 1 else oz)
            d = dx if axis == 0 else (dy if axis == 1 else dz)
            mn = node_min[node, axis]
            mx = node_max[node, axis]
            if d == 0.0:
                if o < mn or o > mx:
                    skip = True
                    break
            else:
                inv = 1.0 / d
                ta = (mn - o) * inv
                tb = (mx - o) * inv
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t_lo:
                    t_lo = ta
                if tb < t_hi:
                    t_hi = tb
                if t_lo > t_hi:
                    skip = True
                    break
        if skip:
            continue
        left = node_left[node]
        if left < 0:  # leaf: triangles order[start : start + count]
            start = -left - 1
            count = node_right[node]
            for k in range(start, start + count):
                fidx = order[k]
                t = _ray_triangle(ox, oy, oz, dx, dy, dz,
                                  tri[fidx, 0, 0], tri[fidx, 0, 1], tri[fidx, 0, 2],
                                  tri[fidx, 1, 0], tri[fidx, 1, 1], tri[fidx, 1, 2],
                                  tri[fidx, 2, 0], tri[fidx, 2, 1], tri[fidx, 2, 2])
                if t < best_t or (t == best_t and t < np.inf and fidx < best_f):
                    best_t = t
                    best_f = fidx
        else:
            stack[sp] = left
            stack[sp + 1] = node_right[node]
            sp += 2
    return best_t, best_f


@njit(cache=True)
def bvh_nearest_batch(tri, node_min, node_max, node_left, node_right, order,
                      origins, directions):
    n = origins.shape[0]
    out_t = np.empty(n, np.float64)
    out_f = np.empty(n, np.int64)
    for i in range(n):
        t, f = _bvh_nearest(tri, node_min, node_max, node_left, node_right, order,
                            origins[i, 0], origins[i, 1], origins[i, 2],
                            directions[i, 0], directions[i, 1], directions[i, 2])
        out_t[i] = t
        out_f[i] = f
    return out_t, out_f


@njit(cache=True)
def brute_nearest_batch(tri, origins, directions):
    """Nearest hit by scanning every triangle; the oracle twin of the BVH path."""
    n = origins.shape[0]
    out_t = np.empty(n, np.float64)
    out_f = np.empty(n, np.int64)
    for i in range(n):
        best_t = np.inf
        best_f = -1
        for fidx in range(tri.shape[0]):
            t = _ray_triangle(origins[i, 0], origins[i, 1], origins[i, 2],
                              directions[i, 0], directions[i, 1], directions[i, 2],
                              tri[fidx, 0, 0], tri[fidx, 0, 1], tri[fidx, 0, 2],
                              tri[fidx, 1, 0], tri[fidx, 1, 1], tri[fidx, 1, 2],
                              tri[fidx, 2, 0], tri[fidx, 2, 1], tri[fidx, 2, 2])
            if t < best_t:
                best_t = t
                best_f = fidx
        out_t[i] = best_t
        out_f[i] = best_f
    return out_t, out_f


@njit(cache=True)
def occlusion_batch(tri, node_min, node_max, node_left, node_right, order,
                    origin, points, rel_eps):
    """True where the segment origin -> point is unobstructed.

    A point is unobstructed when the nearest hit along its ray is no closer
    than (1 - rel_eps) times the point distance, i.e. the first surface the
    ray meets is the point's own neighborhood.
    """
    n = points.shape[0]
    out = np.empty(n, np.bool_)
    for i in range(n):
        vx = points[i, 0] - origin[0]
        vy = points[i, 1] - origin[1]
        vz = points[i, 2] - origin[2]
        dist = np.sqrt(vx * vx + vy * vy + vz * vz)
        if dist <= 0.0:
            out[i] = False
            continue
        t, _ = _bvh_nearest(tri, node_min, node_max, node_left, node_right, order,
                            origin[0], origin[1], origin[2],
                            vx / dist, vy / dist, vz / dist)
        out[i] = t >= dist * (1.0 - rel_eps)
    return out

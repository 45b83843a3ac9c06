import numpy as np
import pytest

from turnbake.bake import _points_unobstructed, brute_nearest, build_visibility, nearest_hit
from turnbake.camera import look_at_pose
from turnbake.mesh import normalize_mesh
from turnbake.primitives import make_mug, make_quad, make_uv_sphere
from turnbake.render import render_gbuffer


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    """Compile the numba kernels once before any test that measures time."""
    quad = make_quad()
    pose = look_at_pose((0.0, -2.0, 0.0), 0.9, 8, 8, 0.5, 4.0)
    render_gbuffer(quad, pose)
    index = build_visibility(quad)
    origin = np.array([[0.0, -2.0, 0.0]])
    direction = np.array([[0.0, 1.0, 0.0]])
    nearest_hit(index, origin, direction)
    brute_nearest(index, origin, direction)
    _points_unobstructed(index, origin[0], np.zeros((1, 3)))


@pytest.fixture(scope="session")
def sphere():
    return make_uv_sphere(24, 48)


@pytest.fixture(scope="session")
def mug():
    return normalize_mesh(make_mug())


def write_obj(path, mesh):
    """Minimal OBJ serializer for CLI fixtures (full precision via repr)."""
    lines = [f"v {float(p[0])!r} {float(p[1])!r} {float(p[2])!r}" for p in mesh.positions]
    lines += [f"vn {float(n[0])!r} {float(n[1])!r} {float(n[2])!r}" for n in mesh.normals]
    lines += [f"vt {float(t[0])!r} {float(t[1])!r}" for t in mesh.uvs]
    for face in mesh.faces:
        toks = []
        for pi, ni, ti in face:
            if ti >= 0:
                toks.append(f"{pi + 1}/{ti + 1}/{ni + 1}")
            else:
                toks.append(f"{pi + 1}//{ni + 1}")
        lines.append("f " + " ".join(toks))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")

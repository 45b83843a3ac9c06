"""turnbake: turntable conditioning renders and confidence-weighted UV baking.

The pipeline turns an untextured mesh into a complete texture atlas: render
aligned geometric conditioning videos along a circular orbit, hand them to an
appearance provider (an oracle re-render, a filesystem exchange, or an HTTP
service), back-project the returned turntable frames into UV space with
ray-traced visibility and angle/depth-edge weighting, and fuse passes under
different base rotations until the surface is covered.
"""

from .bake import (BakeWeights, TexelTable, TextureAtlas, VisibilityIndex,
                   angle_weight, bake_frame, bake_video, brute_nearest,
                   build_texel_table, build_visibility, depth_penalty,
                   depth_penalty_map, load_atlas, nearest_hit, save_atlas,
                   texel_visible, uv_occupancy)
from .camera import (CameraPose, OrbitTrajectory, TrajectoryParams, compute_fov,
                     load_trajectory, look_at_pose, orbit_position,
                     orbit_trajectory, project, project_points, save_trajectory,
                     unproject)
from .errors import (DegenerateMeshError, GeometryMismatchError, InputError,
                     MalformedResponseError, MeshFormatError, MissingUVsError,
                     ProviderError, ProviderTimeout, RemoteJobError,
                     TurnbakeError)
from .fusion import (BakePlan, CoverageReport, PlanStep, coverage, fuse,
                     load_plan, progressive_texture, rotation_grid, save_plan,
                     score_rotation, select_base_rotation)
from .generator import (FilesystemGenerator, GenerationRequest,
                        GenerationResponse, HttpGenerator, OracleGenerator,
                        fs_generate, http_generate, oracle_generate,
                        validate_request, write_manifest)
from .mesh import (Rotation, TriangleMesh, compute_vertex_normals, load_mesh,
                   normalize_mesh, rotate_mesh)
from .metrics import FramePairReport, compare_frames, evaluate_bake, psnr, save_report, ssim
from .render import (GBuffer, ShadingCache, read_color_frames, read_frames,
                     render_color, render_gbuffer, render_turntable, rasterize,
                     write_frames)

__version__ = "0.1.0"

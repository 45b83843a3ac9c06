"""Image-pair quality metrics and bake evaluation reports.

PSNR is computed on unit-range values and capped at 99 dB; SSIM follows the
standard 11x11 Gaussian-window formulation on Rec.601 luma.  Fields for
network-based metrics (LPIPS, FVD) are reserved in the report so external
tooling can merge them.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate

from .bake import TextureAtlas, uv_occupancy
from .camera import OrbitTrajectory
from .errors import InputError
from .fusion import coverage
from .mesh import TriangleMesh
from .render import GBuffer, render_color

PSNR_CAP_DB = 99.0
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2
_SSIM_RADIUS = 5
_SSIM_SIGMA = 1.5
_LUMA = np.array([0.299, 0.587, 0.114])


def psnr(image_a: np.ndarray, image_b: np.ndarray, mask: np.ndarray | None = None) -> float:
    """10 * log10(1 / MSE) over (optionally masked) unit-range pixels."""
    a = np.asarray(image_a, np.float64)
    b = np.asarray(image_b, np.float64)
    if a.shape != b.shape:
        raise InputError(f"image shapes disagree: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if mask is not None:
        m = np.asarray(mask, bool)
        if m.shape != a.shape[:2]:
            raise InputError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
        if not m.any():
            raise InputError("empty mask")
        sq = sq[m]
    mse = float(np.mean(sq))
    if mse <= 0.0:
        return PSNR_CAP_DB
    return float(np.clip(10.0 * math.log10(1.0 / mse), 0.0, PSNR_CAP_DB))


def _ssim_window() -> np.ndarray:
    x = np.arange(-_SSIM_RADIUS, _SSIM_RADIUS + 1, dtype=np.float64)
    g = np.exp(-(x ** 2) / (2.0 * _SSIM_SIGMA ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_luma(img: np.ndarray) -> np.ndarray:
    a = np.asarray(img, np.float64)
    if a.ndim == 3:
        return a @ _LUMA
    return a


def ssim(image_a: np.ndarray, image_b: np.ndarray) -> float:
    """Mean structural similarity (11x11 Gaussian window, sigma 1.5)."""
    x = _to_luma(image_a)
    y = _to_luma(image_b)
    if x.shape != y.shape:
        raise InputError(f"image shapes disagree: {x.shape} vs {y.shape}")
    size = 2 * _SSIM_RADIUS + 1
    if min(x.shape) < size:
        raise InputError(f"image smaller than the {size}x{size} SSIM window")
    k = _ssim_window()
    crop = (slice(_SSIM_RADIUS, -_SSIM_RADIUS),) * 2

    def filt(v):
        return correlate(v, k, mode="constant")[crop]

    mu_x = filt(x)
    mu_y = filt(y)
    sigma_x = filt(x * x) - mu_x * mu_x
    sigma_y = filt(y * y) - mu_y * mu_y
    sigma_xy = filt(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * sigma_xy + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (sigma_x + sigma_y + _SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class FramePairReport:
    per_frame_psnr: tuple[float, ...]
    per_frame_ssim: tuple[float, ...]
    lpips: float | None = None   # reserved: requires a pretrained network
    fvd: float | None = None     # reserved: requires a pretrained network

    @property
    def frame_count(self) -> int:
        return len(self.per_frame_psnr)

    @property
    def mean_psnr(self) -> float:
        return float(np.mean(self.per_frame_psnr))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.per_frame_ssim))


def compare_frames(rendered: list[GBuffer], reference_colors) -> FramePairReport:
    """Per-frame PSNR (masked to object pixels) and SSIM (full frame)."""
    if len(rendered) != len(reference_colors):
        raise InputError(f"{len(rendered)} rendered frames vs "
                         f"{len(reference_colors)} reference frames")
    ps, ss = [], []
    for gb, ref in zip(rendered, reference_colors):
        ref = np.asarray(ref, np.float64)
        ps.append(psnr(gb.color, ref, mask=gb.mask))
        ss.append(ssim(gb.color, ref))
    return FramePairReport(tuple(ps), tuple(ss))


def evaluate_bake(mesh: TriangleMesh, baked: TextureAtlas, reference,
                  trajectory: OrbitTrajectory, *,
                  confidence_threshold: float = 0.05) -> tuple[FramePairReport, float]:
    """Render the baked atlas along the trajectory and score it against a reference.

    `reference` is either a TextureAtlas (rendered the same way) or a list of
    reference RGB frames.  Returns (report, coverage of the baked atlas).
    """
    rendered = [render_color(mesh, baked, pose, confidence_threshold)
                for pose in trajectory.poses]
    if isinstance(reference, TextureAtlas):
        reference_colors = [render_color(mesh, reference, pose, confidence_threshold).color
                            for pose in trajectory.poses]
    else:
        reference_colors = list(reference)
    report = compare_frames(rendered, reference_colors)
    cov = coverage(baked, uv_occupancy(mesh, baked.resolution), confidence_threshold)
    return report, cov


def save_report(report: FramePairReport, cov: float | None, out_dir) -> None:
    """Emit report.txt (one record per frame, summary footer) and report.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"{t:04d}  psnr={p:7.3f} dB  ssim={s:7.5f}"
             for t, (p, s) in enumerate(zip(report.per_frame_psnr, report.per_frame_ssim))]
    lines.append(f"mean  psnr={report.mean_psnr:7.3f} dB  ssim={report.mean_ssim:7.5f}  "
                 f"frames={report.frame_count}"
                 + (f"  coverage={cov:.4f}" if cov is not None else ""))
    (out_dir / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    doc = {
        "per_frame_psnr": list(report.per_frame_psnr),
        "per_frame_ssim": list(report.per_frame_ssim),
        "mean_psnr": report.mean_psnr,
        "mean_ssim": report.mean_ssim,
        "frame_count": report.frame_count,
        "coverage": cov,
        "lpips": report.lpips,
        "fvd": report.fvd,
    }
    (out_dir / "report.json").write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")

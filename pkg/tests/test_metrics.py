import json
import math

import numpy as np
import pytest

from turnbake.bake import TextureAtlas, bake_video
from turnbake.camera import orbit_trajectory
from turnbake.errors import InputError
from turnbake.metrics import (FramePairReport, compare_frames, evaluate_bake, psnr,
                              save_report, ssim)
from turnbake.primitives import checker_atlas, checkerboard
from turnbake.render import render_turntable


def test_psnr_identical_caps_at_99():
    img = np.random.default_rng(0).random((16, 16, 3))
    assert psnr(img, img) == 99.0


def test_psnr_uniform_difference_20db():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.1)
    assert psnr(a, b) == pytest.approx(20.0, abs=1e-9)


def test_psnr_uniform_half():
    a = np.zeros((8, 8))
    b = np.full((8, 8), 0.5)
    assert psnr(a, b) == pytest.approx(10.0 * math.log10(4.0), abs=1e-12)


def test_psnr_symmetric_and_monotone():
    rng = np.random.default_rng(1)
    a = rng.random((12, 12))
    b = np.clip(a + 0.05, 0.0, 1.0)
    c = np.clip(a + 0.2, 0.0, 1.0)
    assert psnr(a, b) == psnr(b, a)
    assert psnr(a, b) > psnr(a, c)


def test_psnr_masked_ignores_outside():
    a = np.zeros((8, 8))
    b = np.zeros((8, 8))
    b[0, 0] = 1.0  # huge error outside the mask
    mask = np.ones((8, 8), bool)
    mask[0, 0] = False
    assert psnr(a, b, mask=mask) == 99.0


def test_psnr_errors():
    with pytest.raises(InputError):
        psnr(np.zeros((4, 4)), np.zeros((5, 4)))
    with pytest.raises(InputError):
        psnr(np.zeros((4, 4)), np.zeros((4, 4)), mask=np.zeros((4, 4), bool))


def test_ssim_identical_is_exactly_one():
    img = np.random.default_rng(2).random((32, 32))
    assert ssim(img, img) == 1.0


def test_ssim_negative_for_inverted_checker():
    base = checkerboard(32, 8)[..., 0]
    assert ssim(base, 1.0 - base) <= 0.0


def test_ssim_constant_pair_closed_form():
    c1 = 0.01 ** 2
    for a, b in ((0.25, 0.75), (0.1, 0.9), (0.5, 0.5)):
        x = np.full((24, 24), a)
        y = np.full((24, 24), b)
        expected = (2 * a * b + c1) / (a * a + b * b + c1)
        assert ssim(x, y) == pytest.approx(expected, abs=1e-9)


def test_ssim_rgb_uses_luma():
    rng = np.random.default_rng(3)
    rgb_a = rng.random((24, 24, 3))
    rgb_b = rng.random((24, 24, 3))
    luma = np.array([0.299, 0.587, 0.114])
    assert ssim(rgb_a, rgb_b) == ssim(rgb_a @ luma, rgb_b @ luma)


def test_ssim_errors():
    with pytest.raises(InputError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))  # smaller than the window
    with pytest.raises(InputError):
        ssim(np.zeros((16, 16)), np.zeros((16, 17)))


def test_compare_frames_requires_equal_counts(sphere):
    traj = orbit_trajectory(2.2, 0.8, 2, 64, 64)
    frames = render_turntable(sphere, checker_atlas(32, 4), traj, 0.0)
    with pytest.raises(InputError):
        compare_frames(frames, [frames[0].color])


def test_evaluate_bake_reference_equals_itself(sphere):
    traj = orbit_trajectory(2.2, 0.8, 3, 96, 96)
    atlas = checker_atlas(64, 4)
    report, cov = evaluate_bake(sphere, atlas, atlas, traj)
    assert report.mean_psnr == 99.0
    assert report.mean_ssim == 1.0
    assert 0.0 < cov <= 1.0


def test_evaluate_bake_shifted_atlas_scores_lower(sphere):
    traj = orbit_trajectory(2.2, 0.8, 3, 96, 96)
    atlas = checker_atlas(64, 8)
    shifted = TextureAtlas(np.roll(atlas.color, 1, axis=1), atlas.confidence)
    base, _ = evaluate_bake(sphere, atlas, atlas, traj)
    moved, _ = evaluate_bake(sphere, shifted, atlas, traj)
    assert moved.mean_psnr < base.mean_psnr


def test_evaluate_bake_roundtrip_pinned(sphere):
    traj = orbit_trajectory(2.2, 0.8, 10, 192, 192)
    reference = checker_atlas(128, 8)
    frames = render_turntable(sphere, reference, traj, 0.0)
    baked = bake_video(sphere, frames, traj, 128)
    report, cov = evaluate_bake(sphere, baked, [f.color for f in frames], traj)
    assert report.mean_psnr >= 30.0
    assert report.frame_count == 10


def test_save_report_files(tmp_path):
    report = FramePairReport((31.0, 33.5), (0.91, 0.95))
    save_report(report, 0.97, tmp_path)
    text = (tmp_path / "report.txt").read_text()
    assert text.count("psnr=") == 3  # two frames + summary footer
    doc = json.loads((tmp_path / "report.json").read_text())
    assert doc["frame_count"] == 2
    assert doc["coverage"] == 0.97
    assert doc["lpips"] is None and doc["fvd"] is None

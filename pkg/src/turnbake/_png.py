"""PNG encode/decode helpers (cv2-backed, fixed settings for reproducible bytes).

Encodings follow the frame-directory contract: signed unit-range vectors map
linearly [-1, 1] -> [0, 65535], depth maps [near, far] -> [0, 65535] with the
background pinned to 65535, masks are 0/255, color is 8-bit sRGB-agnostic RGB.
"""
from __future__ import annotations

import warnings
from pathlib import Path

import cv2
import numpy as np

from .errors import InputError

_PNG_PARAMS = [cv2.IMWRITE_PNG_COMPRESSION, 6]


def _imwrite(path, arr: np.ndarray) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), arr, _PNG_PARAMS):
        raise InputError(f"failed to write image {path}")


def _imread(path, flags=cv2.IMREAD_UNCHANGED) -> np.ndarray:
    img = cv2.imread(str(path), flags)
    if img is None:
        raise InputError(f"failed to read image {path}")
    return img


def write_unit_vector_png(path, arr: np.ndarray) -> None:
    """(H, W, 3) values in [-1, 1] -> 16-bit RGB PNG."""
    a = np.asarray(arr, np.float64)
    if a.min() < -1.0 - 1e-6 or a.max() > 1.0 + 1e-6:
        warnings.warn(f"values outside [-1, 1] clamped while writing {path}")
    a = np.clip(a, -1.0, 1.0)
    q = np.round((a + 1.0) * 0.5 * 65535.0).astype(np.uint16)
    _imwrite(path, q[..., ::-1])  # RGB -> BGR


def read_unit_vector_png(path) -> np.ndarray:
    q = _imread(path)
    if q.ndim != 3 or q.dtype != np.uint16:
        raise InputError(f"{path}: expected 16-bit RGB PNG")
    return (q[..., ::-1].astype(np.float64) / 65535.0) * 2.0 - 1.0


def write_depth_png(path, depth: np.ndarray, near: float, far: float) -> None:
    """(H, W) camera-space depth -> 16-bit grayscale; non-finite -> 65535."""
    d = np.asarray(depth, np.float64)
    scale = (d - near) / (far - near)
    scale = np.where(np.isfinite(d), np.clip(scale, 0.0, 1.0), 1.0)
    _imwrite(path, np.round(scale * 65535.0).astype(np.uint16))


def read_depth_png(path, near: float, far: float) -> np.ndarray:
    q = _imread(path)
    if q.ndim != 2 or q.dtype != np.uint16:
        raise InputError(f"{path}: expected 16-bit grayscale PNG")
    return near + (q.astype(np.float64) / 65535.0) * (far - near)


def write_mask_png(path, mask: np.ndarray) -> None:
    _imwrite(path, np.where(np.asarray(mask, bool), 255, 0).astype(np.uint8))


def read_mask_png(path) -> np.ndarray:
    q = _imread(path, cv2.IMREAD_GRAYSCALE)
    return q >= 128


def write_color_png(path, color: np.ndarray) -> None:
    """(H, W, 3) values in [0, 1] -> 8-bit RGB PNG."""
    q = np.round(np.clip(np.asarray(color, np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    _imwrite(path, q[..., ::-1])


def read_color_png(path) -> np.ndarray:
    q = _imread(path, cv2.IMREAD_COLOR)
    return q[..., ::-1].astype(np.float64) / 255.0


def write_color16_png(path, color: np.ndarray) -> None:
    q = np.round(np.clip(np.asarray(color, np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    _imwrite(path, q[..., ::-1])


def read_color16_png(path) -> np.ndarray:
    q = _imread(path)
    if q.ndim != 3 or q.dtype != np.uint16:
        raise InputError(f"{path}: expected 16-bit RGB PNG")
    return q[..., ::-1].astype(np.float64) / 65535.0


def write_gray16_png(path, gray01: np.ndarray) -> None:
    q = np.round(np.clip(np.asarray(gray01, np.float64), 0.0, 1.0) * 65535.0).astype(np.uint16)
    _imwrite(path, q)

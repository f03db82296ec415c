"""Pinhole camera model, image sampling and PGM I/O.

Camera frame: z forward, x right, y down.  Pixel coordinates ``(u, v)`` are
(column, row) and images are indexed ``img[v, u]``.  Depth maps hold z-depth in
the camera frame with ``NaN`` marking pixels that saw nothing.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from PIL import Image

from .lie import Pose, Rotation

MIN_DEPTH = 1e-6


class BehindCamera(ValueError):
    pass


class NonPositiveDepth(ValueError):
    pass


class OutOfBounds(ValueError):
    pass


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, factor: float) -> "Intrinsics":
        """Resample the model to ``factor`` times the resolution."""
        return Intrinsics(self.fx * factor, self.fy * factor, self.cx * factor,
                          self.cy * factor, int(round(self.width * factor)),
                          int(round(self.height * factor)))

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


# 752x480 sensor downsampled by 4
DEFAULT_INTRINSICS = Intrinsics(fx=120.0, fy=120.0, cx=94.0, cy=60.0, width=188, height=120)


@dataclass(frozen=True)
class View:
    image: np.ndarray
    depth: np.ndarray
    pose: Pose
    intrinsics: Intrinsics

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)


def project(K: Intrinsics, p) -> np.ndarray:
    """Camera-frame point(s) ``(..., 3)`` to pixel(s) ``(..., 2)``."""
    p = np.asarray(p, dtype=float)
    z = p[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera("point is behind the camera")
    return np.stack([K.cx + K.fx * p[..., 0] / z, K.cy + K.fy * p[..., 1] / z], axis=-1)


def backproject(K: Intrinsics, px, d) -> np.ndarray:
    px = np.asarray(px, dtype=float)
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise NonPositiveDepth("depth must be positive")
    x = (px[..., 0] - K.cx) * d / K.fx
    y = (px[..., 1] - K.cy) * d / K.fy
    return np.stack([x, y, np.broadcast_to(d, x.shape)], axis=-1)


def projection_jacobian(K: Intrinsics, p) -> np.ndarray:
    """d(project)/dp, shape ``(..., 2, 3)``."""
    p = np.asarray(p, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    if np.any(z <= MIN_DEPTH):
        raise BehindCamera("point is behind the camera")
    J = np.zeros(p.shape[:-1] + (2, 3))
    iz = 1.0 / z
    J[..., 0, 0] = K.fx * iz
    J[..., 0, 2] = -K.fx * x * iz * iz
    J[..., 1, 1] = K.fy * iz
    J[..., 1, 2] = -K.fy * y * iz * iz
    return J


def pixel_rays(K: Intrinsics, stride: int = 1, offset: int = 0):
    """Pixel grid (as ``(N, 2)``) and unnormalized camera-frame ray directions."""
    us = np.arange(offset, K.width, stride, dtype=float)
    vs = np.arange(offset, K.height, stride, dtype=float)
    uu, vv = np.meshgrid(us, vs)
    px = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    d = np.stack([(px[:, 0] - K.cx) / K.fx, (px[:, 1] - K.cy) / K.fy,
                  np.ones(len(px))], axis=-1)
    return px, d


# --- mounting ----------------------------------------------------------------


def mount_rotation(pitch_deg: float = 0.0) -> np.ndarray:
    """Body-from-camera rotation for a camera pitched forward from straight down.

    ``pitch_deg = 0`` looks straight down with image-up pointing along body +x;
    ``90`` would look straight ahead.
    """
    p = np.deg2rad(pitch_deg)
    x_c = [0.0, -1.0, 0.0]
    y_c = [-np.cos(p), 0.0, -np.sin(p)]
    z_c = [np.sin(p), 0.0, -np.cos(p)]
    return np.array([x_c, y_c, z_c]).T


def camera_pose(position, yaw: float = 0.0, pitch_deg: float = 0.0) -> Pose:
    """World-from-camera pose of a body at ``position`` with heading ``yaw``."""
    body = Rotation.about_z(yaw).matrix
    return Pose(Rotation(body @ mount_rotation(pitch_deg)), position)


# --- image sampling ----------------------------------------------------------


def _check_guard(img: np.ndarray, px: np.ndarray):
    h, w = img.shape
    u, v = px[..., 0], px[..., 1]
    if np.any((u < 1) | (u > w - 2) | (v < 1) | (v > h - 2)) or not np.all(np.isfinite(px)):
        raise OutOfBounds("pixel outside the guarded image domain")


def bilinear(img: np.ndarray, u, v) -> np.ndarray:
    """Unchecked bilinear lookup (indices clipped to the image)."""
    h, w = img.shape
    u = np.clip(np.asarray(u, dtype=float), 0.0, w - 1.0)
    v = np.clip(np.asarray(v, dtype=float), 0.0, h - 1.0)
    u0 = np.minimum(np.floor(u).astype(np.intp), w - 2)
    v0 = np.minimum(np.floor(v).astype(np.intp), h - 2)
    a = u - u0
    b = v - v0
    top = img[v0, u0] * (1 - a) + img[v0, u0 + 1] * a
    bot = img[v0 + 1, u0] * (1 - a) + img[v0 + 1, u0 + 1] * a
    return top * (1 - b) + bot * b


def sample_bilinear(img: np.ndarray, px) -> np.ndarray:
    px = np.asarray(px, dtype=float)
    _check_guard(img, px)
    return bilinear(img, px[..., 0], px[..., 1])


def image_gradient(img: np.ndarray, px) -> np.ndarray:
    """Central difference of bilinear samples at +-0.5 px (intensity / pixel)."""
    px = np.asarray(px, dtype=float)
    _check_guard(img, px)
    u, v = px[..., 0], px[..., 1]
    gu = bilinear(img, u + 0.5, v) - bilinear(img, u - 0.5, v)
    gv = bilinear(img, u, v + 0.5) - bilinear(img, u, v - 0.5)
    return np.stack([gu, gv], axis=-1)


def grid_gradient(img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same as :func:`image_gradient` evaluated at every integer pixel.

    Border rows/columns are zero.
    """
    gu = np.zeros_like(img)
    gv = np.zeros_like(img)
    gu[:, 1:-1] = 0.5 * (img[:, 2:] - img[:, :-2])
    gv[1:-1, :] = 0.5 * (img[2:, :] - img[:-2, :])
    return gu, gv


# --- PGM ---------------------------------------------------------------------


def read_pgm(path) -> np.ndarray:
    """8-bit grayscale PGM as a float image in [0, 1]."""
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise ValueError(f"{path}: not an 8-bit grayscale PGM")
        return np.asarray(im, dtype=float) / 255.0


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def write_pgm(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 2:
        raise ValueError("PGM images must be 2-D")
    Image.fromarray(to_uint8(img), mode="L").save(path, format="PPM")

"""Pinhole camera, depth images, and depth <-> point conversions.

Camera frame: +x right, +y down, +z forward. Depth values are camera-z in
millimeters; 0 marks a missing measurement. Projection u = fx*x/z + cx with
pixel centers at integer coordinates (a point projects to pixel round(u)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass(frozen=True)
class DepthImage:
    data: np.ndarray  # (h, w) float64 mm, 0 = missing

    def __post_init__(self):
        d = np.asarray(self.data, dtype=np.float64)
        if d.ndim != 2:
            raise ValueError("depth image must be 2D")
        if d.min() < 0:
            raise ValueError("depth values must be non-negative")
        object.__setattr__(self, "data", d)

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    def valid_mask(self):
        return self.data > 0


def project(points_cam, cam: CameraIntrinsics):
    """Continuous pixel coordinates (u, v) and depth z of camera-frame points."""
    p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    z = p[:, 2]
    safe = np.where(z > 0, z, 1.0)
    u = cam.fx * p[:, 0] / safe + cam.cx
    v = cam.fy * p[:, 1] / safe + cam.cy
    return u, v, z


def pixel_of(u, v):
    """Nearest pixel (col, row) for continuous image coordinates."""
    return np.floor(u + 0.5).astype(np.int64), np.floor(v + 0.5).astype(np.int64)


def back_project(depth: DepthImage, cam: CameraIntrinsics):
    """Camera-frame 3D point per pixel, (h, w, 3); zeros where depth missing."""
    z = depth.data
    vv, uu = np.mgrid[0:depth.height, 0:depth.width]
    x = (uu - cam.cx) * z / cam.fx
    y = (vv - cam.cy) * z / cam.fy
    return np.dstack([x, y, z])


def back_project_pixels(cols, rows, z, cam: CameraIntrinsics):
    x = (np.asarray(cols) - cam.cx) * z / cam.fx
    y = (np.asarray(rows) - cam.cy) * z / cam.fy
    return np.column_stack([x, y, z])


def normal_map_from_depth(depth: DepthImage, cam: CameraIntrinsics,
                          jump=20.0, smooth=True):
    """Per-pixel surface normals from central depth differences.

    Normals are oriented toward the camera. Pixels whose 4-neighborhood is
    incomplete or spans a depth jump larger than `jump` get a zero normal.
    A single 3x3 vector-mean pass (`smooth`) tames sensor noise.
    """
    pts = back_project(depth, cam)
    valid = depth.valid_mask()

    du = np.zeros_like(pts)
    dv = np.zeros_like(pts)
    du[:, 1:-1] = pts[:, 2:] - pts[:, :-2]
    dv[1:-1, :] = pts[2:, :] - pts[:-2, :]

    ok = np.zeros_like(valid)
    ok[1:-1, 1:-1] = (valid[1:-1, 2:] & valid[1:-1, :-2] &
                      valid[2:, 1:-1] & valid[:-2, 1:-1] & valid[1:-1, 1:-1])
    z = depth.data
    jump_ok = np.zeros_like(valid)
    jump_ok[1:-1, 1:-1] = (
        (np.abs(z[1:-1, 2:] - z[1:-1, 1:-1]) < jump) &
        (np.abs(z[1:-1, :-2] - z[1:-1, 1:-1]) < jump) &
        (np.abs(z[2:, 1:-1] - z[1:-1, 1:-1]) < jump) &
        (np.abs(z[:-2, 1:-1] - z[1:-1, 1:-1]) < jump))
    ok &= jump_ok

    n = np.cross(du.reshape(-1, 3), dv.reshape(-1, 3)).reshape(pts.shape)
    # orient toward the camera at the origin: n . (-p) >= 0
    flip = np.einsum("hwc,hwc->hw", n, pts) > 0
    n[flip] = -n[flip]
    n[~ok] = 0.0

    if smooth:
        acc = np.zeros_like(n)
        for dy in (-1, 0, 1):
            for dx in (-1, 0, 1):
                acc[max(0, -dy):n.shape[0] - max(0, dy),
                    max(0, -dx):n.shape[1] - max(0, dx)] += \
                    n[max(0, dy):n.shape[0] + min(0, dy),
                      max(0, dx):n.shape[1] + min(0, dx)]
        n = np.where(ok[:, :, None], acc, 0.0)

    lens = np.linalg.norm(n, axis=2)
    good = ok & (lens > 1e-12)
    out = np.zeros_like(n)
    out[good] = n[good] / lens[good][:, None]
    return out, good

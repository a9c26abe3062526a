"""16-bit depth PNG and key-value intrinsics file I/O."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .camera import CameraIntrinsics, DepthImage

INTRINSICS_KEYS = ("fx", "fy", "cx", "cy", "width", "height")


def load_intrinsics(path) -> CameraIntrinsics:
    """Parse `key: value` (or `key = value`) lines; '#' starts a comment."""
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            sep = ":" if ":" in line else ("=" if "=" in line else None)
            if sep is None:
                raise ValueError(f"{path}: malformed line {ln}: {raw.strip()!r}")
            key, val = (s.strip() for s in line.split(sep, 1))
            values[key] = val
    missing = [k for k in INTRINSICS_KEYS if k not in values]
    if missing:
        raise ValueError(f"{path}: missing intrinsics keys: {', '.join(missing)}")
    return CameraIntrinsics(
        fx=float(values["fx"]), fy=float(values["fy"]),
        cx=float(values["cx"]), cy=float(values["cy"]),
        width=int(values["width"]), height=int(values["height"]))


def save_intrinsics(path, cam: CameraIntrinsics):
    with open(path, "w", encoding="utf-8") as fh:
        for key in INTRINSICS_KEYS:
            fh.write(f"{key}: {getattr(cam, key)}\n")


def load_depth_png(path, depth_scale: float) -> DepthImage:
    """Read a 16-bit single-channel PNG; raw counts scale to millimeters.

    Zero raw values stay zero (missing measurement).
    """
    img = Image.open(path)
    if img.mode not in ("I;16", "I;16B", "I;16L", "I"):
        raise ValueError(f"{path}: expected a 16-bit single-channel image, got mode {img.mode!r}")
    raw = np.asarray(img)
    if raw.dtype not in (np.uint16, np.int32, np.uint32):
        raise ValueError(f"{path}: unexpected pixel dtype {raw.dtype}")
    if raw.min() < 0 or raw.max() > 0xFFFF:
        raise ValueError(f"{path}: pixel values outside the 16-bit range")
    return DepthImage(raw.astype(np.float64) * depth_scale)


def save_depth_png(path, depth: DepthImage, depth_scale: float):
    """Quantize millimeters to 16-bit counts and write a grayscale PNG."""
    raw = np.round(depth.data / depth_scale)
    if raw.max() > 0xFFFF:
        raise ValueError("depth exceeds the 16-bit range at this depth_scale")
    img = Image.fromarray(raw.astype(np.uint16))
    img.save(path, format="PNG")


def load_depth(path, depth_scale, intrinsics_path):
    """Depth image + camera intrinsics pair, dimensions cross-checked."""
    cam = load_intrinsics(intrinsics_path)
    depth = load_depth_png(path, depth_scale)
    if (depth.height, depth.width) != (cam.height, cam.width):
        raise ValueError(
            f"depth image is {depth.width}x{depth.height} but intrinsics say "
            f"{cam.width}x{cam.height}")
    return depth, cam

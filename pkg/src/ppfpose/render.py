"""Software z-buffer rendering of meshes and point clouds into depth images."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, DepthImage, project
from .geometry import OrientedPointCloud, RigidTransform, TriMesh

_NEAR_Z = 1.0  # mm; geometry closer than this is not rendered


@dataclass
class ObjectModel:
    """Render/verify-side view of an object: subsampled cloud, leaf size, and
    the original mesh when one is available (rasterized instead of splatted)."""

    cloud: OrientedPointCloud
    leaf: float
    mesh: TriMesh | None = None


def _rasterize_batch(buf, tu, tv, tz, cam):
    """Rasterize same-size-class triangles as one array operation.

    tu/tv/tz are (T, 3) screen coordinates and vertex depths; all triangles
    share a common local grid big enough for the largest bounding box.
    """
    lo_u = np.maximum(np.ceil(tu.min(axis=1) - 0.5).astype(np.int64), 0)
    lo_v = np.maximum(np.ceil(tv.min(axis=1) - 0.5).astype(np.int64), 0)
    hi_u = np.minimum(np.floor(tu.max(axis=1) + 0.5).astype(np.int64), cam.width - 1)
    hi_v = np.minimum(np.floor(tv.max(axis=1) + 0.5).astype(np.int64), cam.height - 1)
    span = max(int((hi_u - lo_u).max(initial=-1)), int((hi_v - lo_v).max(initial=-1))) + 1
    if span <= 0:
        return
    dy, dx = np.mgrid[0:span, 0:span]
    gx = lo_u[:, None] + dx.ravel()[None, :]        # (T, span^2)
    gy = lo_v[:, None] + dy.ravel()[None, :]
    valid = (gx <= hi_u[:, None]) & (gy <= hi_v[:, None])

    area = ((tu[:, 1] - tu[:, 0]) * (tv[:, 2] - tv[:, 0])
            - (tu[:, 2] - tu[:, 0]) * (tv[:, 1] - tv[:, 0]))
    ok = np.abs(area) > 1e-12
    if not ok.all():
        valid &= ok[:, None]
    area = np.where(ok, area, 1.0)

    # proper barycentrics (sum to 1, winding-independent sign)
    w0 = ((tu[:, 1, None] - gx) * (tv[:, 2, None] - gy)
          - (tu[:, 2, None] - gx) * (tv[:, 1, None] - gy)) / area[:, None]
    w1 = ((tu[:, 2, None] - gx) * (tv[:, 0, None] - gy)
          - (tu[:, 0, None] - gx) * (tv[:, 2, None] - gy)) / area[:, None]
    w2 = 1.0 - w0 - w1
    inside = valid & (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
    if not inside.any():
        return
    # 1/z interpolates linearly in screen space (exact for planar faces)
    inv_z = (w0 / tz[:, 0, None] + w1 / tz[:, 1, None] + w2 / tz[:, 2, None])
    zi = 1.0 / np.abs(inv_z[inside])
    flat = (gy * cam.width + gx)[inside]
    np.minimum.at(buf.reshape(-1), flat, zi)


def render_mesh_depth(vertices_cam, faces, cam: CameraIntrinsics, buf=None):
    """Rasterize triangles with perspective-correct depth, nearest wins.

    Triangles with any vertex closer than the near plane are skipped.
    Triangles are batched by bounding-box size class so typical meshes render
    in a handful of vectorized passes.
    """
    if buf is None:
        buf = np.full((cam.height, cam.width), np.inf)
    v = np.asarray(vertices_cam, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return buf
    u, vv, z = project(v, cam)
    tu, tv, tz = u[faces], vv[faces], z[faces]

    keep = (tz >= _NEAR_Z).all(axis=1)
    keep &= (tu.min(axis=1) <= cam.width - 0.5) & (tu.max(axis=1) >= -0.5)
    keep &= (tv.min(axis=1) <= cam.height - 0.5) & (tv.max(axis=1) >= -0.5)
    if not keep.any():
        return buf
    tu, tv, tz = tu[keep], tv[keep], tz[keep]

    extent = np.maximum(tu.max(axis=1) - tu.min(axis=1),
                        tv.max(axis=1) - tv.min(axis=1))
    size_class = np.clip(np.ceil(np.log2(np.maximum(extent, 1.0))).astype(np.int64), 0, 30)
    for cls in np.unique(size_class):
        sel = size_class == cls
        if cls <= 6:  # up to 64 px boxes in one batch
            _rasterize_batch(buf, tu[sel], tv[sel], tz[sel], cam)
        else:         # oversized triangles go one at a time
            for i in np.nonzero(sel)[0]:
                _rasterize_batch(buf, tu[i:i + 1], tv[i:i + 1], tz[i:i + 1], cam)
    return buf


def render_points_depth(points_cam, cam: CameraIntrinsics, splat_mm, buf=None):
    """Splat points as discs of pixel radius ceil(fx * splat_mm / z)."""
    if buf is None:
        buf = np.full((cam.height, cam.width), np.inf)
    p = np.asarray(points_cam, dtype=np.float64).reshape(-1, 3)
    u, v, z = project(p, cam)
    front = z >= _NEAR_Z
    if not front.any():
        return buf
    u, v, z = u[front], v[front], z[front]
    cols = np.floor(u + 0.5).astype(np.int64)
    rows = np.floor(v + 0.5).astype(np.int64)
    radii = np.ceil(cam.fx * splat_mm / z).astype(np.int64) if splat_mm > 0 \
        else np.zeros(len(z), dtype=np.int64)
    flat = buf.reshape(-1)
    for r in np.unique(radii):
        sel = radii == r
        dy, dx = np.mgrid[-r:r + 1, -r:r + 1]
        disc = (dx * dx + dy * dy) <= r * r
        offs = np.column_stack([dx[disc], dy[disc]])
        cc = cols[sel][:, None] + offs[:, 0][None, :]
        rr = rows[sel][:, None] + offs[:, 1][None, :]
        zz = np.broadcast_to(z[sel][:, None], cc.shape)
        ok = (cc >= 0) & (cc < cam.width) & (rr >= 0) & (rr < cam.height)
        np.minimum.at(flat, (rr[ok] * cam.width + cc[ok]), zz[ok])
    return buf


def render_depth(model: ObjectModel, pose: RigidTransform,
                 cam: CameraIntrinsics) -> DepthImage:
    """Depth image of the model at `pose` (mesh rasterization when faces are
    available, point splatting otherwise). Unwritten pixels are 0."""
    if model.mesh is not None:
        buf = render_mesh_depth(pose.apply(model.mesh.vertices), model.mesh.faces, cam)
    else:
        buf = render_points_depth(pose.apply(model.cloud.points), cam, model.leaf)
    buf[~np.isfinite(buf)] = 0.0
    return DepthImage(buf)


def composite_depth(layers) -> DepthImage:
    """Merge rendered depth buffers, nearest measurement wins per pixel."""
    out = np.full_like(layers[0], np.inf)
    for layer in layers:
        vals = np.where(layer > 0, layer, np.inf)
        out = np.minimum(out, vals)
    out[~np.isfinite(out)] = 0.0
    return DepthImage(out)

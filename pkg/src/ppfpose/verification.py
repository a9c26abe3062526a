"""Hypothesis verification: depth re-scoring, projective ICP, and filters.

All predicates work on a rendered depth of the model at the hypothesis pose
compared against the measured scene depth. Pixels without a scene measurement
never enter score denominators, but missing-data boundaries do count as scene
edges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .camera import (
    CameraIntrinsics,
    DepthImage,
    back_project_pixels,
    normal_map_from_depth,
    project,
)
from .geometry import RigidTransform, axis_angle_rotation
from .matching import HypothesisStatus, PoseHypothesis
from .render import ObjectModel, render_depth


@dataclass(frozen=True)
class VerifyParams:
    rescore_top: int = 500
    icp_top: int = 200
    fit_thresh: float | None = None        # None: 2 * leaf
    icp_iters: int = 15
    icp_reject_dist: float | None = None   # None: 2.5 * leaf
    icp_reject_angle: float = math.radians(45.0)
    occlusion_margin: float = 10.0
    nonconsistent_max: float = 0.1
    edge_depth_jump: float = 40.0
    edge_dilation: int = 2
    edge_overlap_min: float = 0.3

    def __post_init__(self):
        for name in ("rescore_top", "icp_top", "icp_iters", "occlusion_margin",
                     "edge_depth_jump", "edge_dilation", "icp_reject_angle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("nonconsistent_max", "edge_overlap_min"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1)")

    def resolved(self, leaf: float) -> "VerifyParams":
        out = self
        if out.fit_thresh is None:
            out = replace(out, fit_thresh=2.0 * leaf)
        if out.icp_reject_dist is None:
            out = replace(out, icp_reject_dist=2.5 * leaf)
        return out


def rescore(h: PoseHypothesis, scene_depth: DepthImage, cam: CameraIntrinsics,
            model: ObjectModel, p: VerifyParams) -> float:
    """Fraction of visible model pixels that agree with the scene depth.

    Renders the model at the hypothesis pose (self-occlusion handled by the
    z-buffer) and counts mask pixels whose measured scene depth is within
    `fit_thresh`; pixels without a measurement are excluded entirely.
    """
    rendered = render_depth(model, h.pose, cam).data
    mask = (rendered > 0) & (scene_depth.data > 0)
    denom = int(mask.sum())
    if denom == 0:
        return 0.0
    agree = np.abs(rendered[mask] - scene_depth.data[mask]) < p.fit_thresh
    return float(agree.sum()) / denom


def _solve_point_to_plane(src, dst, normals):
    """One linearized point-to-plane step; returns (rotation, translation)."""
    A = np.hstack([np.cross(src, normals), normals])
    b = np.einsum("ij,ij->i", normals, dst - src)
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    omega, dt = x[:3], x[3:]
    angle = np.linalg.norm(omega)
    R = np.eye(3) if angle < 1e-14 else axis_angle_rotation(omega / angle, angle)
    return R, dt, angle


def _project_correspondences(points, pose, scene_depth, cam):
    moved = pose.apply(points)
    u, v, z = project(moved, cam)
    cols = np.floor(u + 0.5).astype(np.int64)
    rows = np.floor(v + 0.5).astype(np.int64)
    ok = (z > 0) & (cols >= 0) & (cols < cam.width) & (rows >= 0) & (rows < cam.height)
    meas = np.zeros(len(points))
    meas[ok] = scene_depth.data[rows[ok], cols[ok]]
    ok &= meas > 0
    return moved, cols, rows, ok


def projective_icp(h: PoseHypothesis, scene_depth: DepthImage,
                   cam: CameraIntrinsics, model: ObjectModel, p: VerifyParams,
                   scene_normals=None, rms_trace=None) -> PoseHypothesis:
    """Point-to-plane ICP with pixel-projection correspondences.

    Model points are projected into the depth image; the back-projected scene
    point (with its normal-map normal) at that pixel is the correspondence.
    Pairs farther than `icp_reject_dist` or with normals differing by more
    than `icp_reject_angle` are dropped. A step that would increase the
    point-to-plane RMS over the accepted pairs is rejected and ends the loop.

    `rms_trace`, when given a list, collects (rms before, rms after) for
    every accepted step.
    """
    if scene_normals is None:
        scene_normals, _ = normal_map_from_depth(scene_depth, cam)
    pts = model.cloud.points
    nms = model.cloud.normals
    pose = h.pose
    cos_reject = math.cos(p.icp_reject_angle)
    low_support = False

    for _ in range(p.icp_iters):
        moved, cols, rows, ok = _project_correspondences(pts, pose, scene_depth, cam)
        if ok.sum() < 6:
            low_support = True
            break
        q = back_project_pixels(cols[ok], rows[ok],
                                scene_depth.data[rows[ok], cols[ok]], cam)
        n_q = scene_normals[rows[ok], cols[ok]]
        src = moved[ok]
        n_src = pose.apply_normals(nms[ok])
        keep = (np.linalg.norm(q - src, axis=1) <= p.icp_reject_dist)
        keep &= np.linalg.norm(n_q, axis=1) > 0.5
        keep &= np.einsum("ij,ij->i", n_q, n_src) >= cos_reject
        if keep.sum() < 6:
            low_support = True
            break
        src_k, q_k, n_k = src[keep], q[keep], n_q[keep]
        rms_before = math.sqrt(np.mean(np.einsum("ij,ij->i", n_k, q_k - src_k) ** 2))
        R, dt, angle = _solve_point_to_plane(src_k, q_k, n_k)
        candidate = RigidTransform(R @ pose.rotation, R @ pose.translation + dt)
        src_new = candidate.apply(pts[ok][keep])
        rms_after = math.sqrt(np.mean(np.einsum("ij,ij->i", n_k, q_k - src_new) ** 2))
        if rms_after > rms_before + 1e-12:
            break  # step rejected; keep the last accepted pose
        pose = candidate
        if rms_trace is not None:
            rms_trace.append((rms_before, rms_after))
        if angle < math.radians(0.01) and np.linalg.norm(dt) < 0.01:
            break

    return PoseHypothesis(pose=pose, votes=h.votes, scene_ref=h.scene_ref,
                          score=h.score, status=HypothesisStatus.REFINED,
                          low_support=low_support)


def consistency_filter(h: PoseHypothesis, scene_depth: DepthImage,
                       cam: CameraIntrinsics, model: ObjectModel,
                       p: VerifyParams) -> bool:
    """Reject hypotheses that claim opaque surface where the sensor saw
    through to farther geometry.

    A mask pixel with a measurement is non-consistent when the rendered model
    is nearer than the scene by more than `occlusion_margin`; pixels where the
    scene is nearer count as occlusion, which is consistent.
    """
    rendered = render_depth(model, h.pose, cam).data
    mask = (rendered > 0) & (scene_depth.data > 0)
    denom = int(mask.sum())
    if denom == 0:
        return False
    nonconsistent = rendered[mask] < scene_depth.data[mask] - p.occlusion_margin
    return float(nonconsistent.sum()) / denom <= p.nonconsistent_max


def scene_edge_map(scene_depth: DepthImage, p: VerifyParams):
    """Depth-discontinuity edges, dilated by `edge_dilation` pixels.

    A pixel is an edge when any 4-neighbor differs by more than
    `edge_depth_jump` or when it sits on a measured/missing boundary.
    """
    z = scene_depth.data
    valid = z > 0
    edge = np.zeros_like(valid)
    for axis, shift in ((0, 1), (0, -1), (1, 1), (1, -1)):
        zn = np.roll(z, shift, axis=axis)
        vn = np.roll(valid, shift, axis=axis)
        # roll wraps around; mask out the wrapped border row/column
        border = np.zeros_like(valid)
        if axis == 0:
            border[0 if shift == 1 else -1, :] = True
        else:
            border[:, 0 if shift == 1 else -1] = True
        jump = valid & vn & (np.abs(z - zn) > p.edge_depth_jump)
        missing = valid != vn
        edge |= (jump | missing) & ~border
    if p.edge_dilation > 0:
        edge = ndimage.binary_dilation(edge, iterations=p.edge_dilation)
    return edge


def silhouette_of(mask):
    """Mask pixels with at least one non-mask 4-neighbor (borders count)."""
    interior = np.ones_like(mask)
    interior[1:, :] &= mask[:-1, :]
    interior[:-1, :] &= mask[1:, :]
    interior[:, 1:] &= mask[:, :-1]
    interior[:, :-1] &= mask[:, 1:]
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    return mask & ~interior


def edge_overlap_filter(h: PoseHypothesis, scene_depth: DepthImage,
                        cam: CameraIntrinsics, model: ObjectModel,
                        p: VerifyParams, edges=None) -> bool:
    """Keep hypotheses whose silhouette coincides with scene depth edges.

    Well-fitting but boundary-less poses (a plane matched inside a larger
    wall) produce silhouettes that cross no scene edges and are rejected.
    """
    if edges is None:
        edges = scene_edge_map(scene_depth, p)
    rendered = render_depth(model, h.pose, cam).data
    sil = silhouette_of(rendered > 0)
    total = int(sil.sum())
    if total == 0:
        return False
    return float((sil & edges).sum()) / total >= p.edge_overlap_min


def verify_pipeline(hyps, scene_depth: DepthImage, cam: CameraIntrinsics,
                    model: ObjectModel, p: VerifyParams):
    """Re-score the top hypotheses, refine the best with projective ICP, and
    return the highest-scoring hypothesis that survives both filters.

    `hyps` must be clustered and vote-sorted. Hypotheses are annotated in
    place (score, status); absence of a surviving hypothesis returns None.
    """
    if not hyps:
        return None
    scene_normals, _ = normal_map_from_depth(scene_depth, cam)
    edges = scene_edge_map(scene_depth, p)

    pool = hyps[:p.rescore_top]
    for h in pool:
        h.score = rescore(h, scene_depth, cam, model, p)
        h.status = HypothesisStatus.RESCORED
    pool.sort(key=lambda h: (-h.score, -h.votes, h.scene_ref))

    refined = []
    for h in pool[:p.icp_top]:
        r = projective_icp(h, scene_depth, cam, model, p, scene_normals=scene_normals)
        r.score = rescore(r, scene_depth, cam, model, p)
        refined.append(r)
    candidates = refined + pool[p.icp_top:]
    candidates.sort(key=lambda h: (-h.score, -h.votes, h.scene_ref))

    for h in candidates:
        if not consistency_filter(h, scene_depth, cam, model, p):
            h.status = HypothesisStatus.REJECTED_CONSISTENCY
            continue
        if not edge_overlap_filter(h, scene_depth, cam, model, p, edges=edges):
            h.status = HypothesisStatus.REJECTED_EDGE
            continue
        h.status = HypothesisStatus.ACCEPTED
        return h
    return None

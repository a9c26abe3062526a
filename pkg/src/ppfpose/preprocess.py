"""Subsampling with per-voxel normal clustering and neighbor-duplicate merging.

A voxel may emit several representative points when its surface normals span
more than `normal_cluster_angle`; near-duplicate representatives in adjacent
voxels are then merged so they do not flood the pair table with redundant
features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import OrientedPointCloud


@dataclass(frozen=True)
class SubsampleParams:
    leaf: float
    normal_cluster_angle: float = math.pi / 6
    merge_neighbor_clusters: bool = True

    def __post_init__(self):
        if self.leaf <= 0:
            raise ValueError("leaf must be positive")
        # pi is allowed: it degenerates to plain voxel-grid subsampling
        if not 0 < self.normal_cluster_angle <= math.pi:
            raise ValueError("normal_cluster_angle must be in (0, pi]")


@dataclass
class ClusteredCloud:
    """Representatives emitted by `subsample`, one per (voxel, normal cluster).

    weights[i] is the number of source points behind representative i; it is
    used as the merge weight in `filter_neighbor_pairs`.
    """

    cloud: OrientedPointCloud
    cell_id: np.ndarray       # (n,) index of the occupied voxel
    cluster_id: np.ndarray    # (n,) unique per representative
    cell_coords: np.ndarray   # (n, 3) integer voxel coordinates
    weights: np.ndarray       # (n,) source point counts


def voxel_coords(points, leaf, origin=None):
    """Integer voxel coordinates, anchored at the cloud's min corner."""
    pts = np.asarray(points, dtype=np.float64)
    if origin is None:
        origin = pts.min(axis=0)
    return np.floor((pts - origin) / leaf).astype(np.int64), origin


def _mean_direction(normal_sum, fallback):
    n = np.linalg.norm(normal_sum)
    if n < 1e-12:
        return fallback
    return normal_sum / n


def subsample(c: OrientedPointCloud, p: SubsampleParams) -> ClusteredCloud:
    """Voxel-grid subsampling that keeps distinct normal directions.

    Within each voxel of edge `p.leaf`, points are clustered greedily in a
    deterministic order: a point joins the first cluster whose running mean
    normal is within `normal_cluster_angle`, otherwise it seeds a new cluster.
    Each cluster emits its position centroid with the renormalized mean normal.
    """
    if len(c) == 0:
        raise ValueError("cannot subsample an empty cloud")
    cells, _ = voxel_coords(c.points, p.leaf)
    order = np.lexsort((np.arange(len(c)), cells[:, 2], cells[:, 1], cells[:, 0]))
    cells_s = cells[order]
    pts_s = c.points[order]
    nms_s = c.normals[order]

    boundary = np.any(np.diff(cells_s, axis=0) != 0, axis=1)
    group = np.concatenate([[0], np.cumsum(boundary)])
    n_groups = int(group[-1]) + 1
    starts = np.concatenate([[0], np.nonzero(boundary)[0] + 1, [len(c)]])

    # fast path: a voxel whose normals all lie within half the threshold of
    # its first normal provably collapses to one cluster under the greedy
    # rule (every prefix mean stays inside that half-angle cone)
    cos_half = math.cos(p.normal_cluster_angle / 2.0)
    first_idx = starts[:-1]
    first_normals = nms_s[first_idx]
    dots = np.einsum("ij,ij->i", nms_s, first_normals[group])
    single = np.ones(n_groups, dtype=bool)
    np.logical_and.at(single, group, dots >= cos_half)

    rep_pts, rep_nms, rep_cell_id, rep_coords, rep_w = [], [], [], [], []
    if single.any():
        sel = single[group]
        g_sel = group[sel]
        packed = np.unique(g_sel)
        remap = np.searchsorted(packed, g_sel)
        m = len(packed)
        psum = np.zeros((m, 3))
        nsum = np.zeros((m, 3))
        np.add.at(psum, remap, pts_s[sel])
        np.add.at(nsum, remap, nms_s[sel])
        cnt = np.bincount(remap, minlength=m).astype(np.float64)
        rep_pts.append(psum / cnt[:, None])
        lens = np.linalg.norm(nsum, axis=1, keepdims=True)
        rep_nms.append(nsum / lens)
        rep_cell_id.append(packed)
        rep_coords.append(cells_s[starts[packed]])
        rep_w.append(cnt.astype(np.int64))

    cos_thresh = math.cos(p.normal_cluster_angle)
    s_pts, s_nms, s_cell, s_coords, s_w = [], [], [], [], []
    for gi in np.nonzero(~single)[0]:
        lo, hi = starts[gi], starts[gi + 1]
        sums, counts, centroids, firsts = [], [], [], []
        for j in range(lo, hi):
            n = nms_s[j]
            placed = False
            for ci in range(len(sums)):
                mean = _mean_direction(sums[ci], firsts[ci])
                # a zeroed-out running mean accepts anything (degenerate case)
                if np.linalg.norm(sums[ci]) < 1e-12 or float(n @ mean) >= cos_thresh:
                    sums[ci] = sums[ci] + n
                    centroids[ci] = centroids[ci] + pts_s[j]
                    counts[ci] += 1
                    placed = True
                    break
            if not placed:
                sums.append(n.copy())
                centroids.append(pts_s[j].copy())
                counts.append(1)
                firsts.append(n.copy())
        for ci in range(len(sums)):
            s_pts.append(centroids[ci] / counts[ci])
            s_nms.append(_mean_direction(sums[ci], firsts[ci]))
            s_cell.append(gi)
            s_coords.append(cells_s[lo])
            s_w.append(counts[ci])
    if s_pts:
        rep_pts.append(np.asarray(s_pts))
        rep_nms.append(np.asarray(s_nms))
        rep_cell_id.append(np.asarray(s_cell, dtype=np.int64))
        rep_coords.append(np.asarray(s_coords, dtype=np.int64))
        rep_w.append(np.asarray(s_w, dtype=np.int64))

    rep_pts = np.concatenate(rep_pts)
    rep_nms = np.concatenate(rep_nms)
    rep_cell_id = np.concatenate(rep_cell_id).astype(np.int64)
    rep_coords = np.concatenate(rep_coords)
    rep_w = np.concatenate(rep_w)

    # deterministic order: by voxel, then by emission within the voxel
    out_order = np.argsort(rep_cell_id, kind="stable")
    rep_pts, rep_nms = rep_pts[out_order], rep_nms[out_order]
    rep_cell_id, rep_coords = rep_cell_id[out_order], rep_coords[out_order]
    rep_w = rep_w[out_order]

    cloud = OrientedPointCloud(rep_pts, rep_nms)
    return ClusteredCloud(
        cloud=cloud,
        cell_id=np.asarray(rep_cell_id, dtype=np.int64),
        cluster_id=np.arange(len(rep_pts), dtype=np.int64),
        cell_coords=np.asarray(rep_coords, dtype=np.int64),
        weights=np.asarray(rep_w, dtype=np.int64),
    )


def filter_neighbor_pairs(cc: ClusteredCloud, p: SubsampleParams) -> OrientedPointCloud:
    """Merge near-duplicate representatives across adjacent voxels.

    Representatives in the same or 26-adjacent voxels whose normals differ by
    less than `normal_cluster_angle` AND whose distance is below `leaf` carry
    no discriminative pair information; they are merged into one point
    (weighted centroid, renormalized weighted mean normal).
    """
    if not p.merge_neighbor_clusters:
        return cc.cloud

    pts = cc.cloud.points
    nms = cc.cloud.normals
    n = len(pts)
    cos_thresh = math.cos(p.normal_cluster_angle)

    # candidate duplicate pairs, nearest first; distance < leaf already
    # implies the voxels are identical or 26-adjacent
    raw = cKDTree(pts).query_pairs(p.leaf, output_type="ndarray")
    candidates = []
    if len(raw):
        d = np.linalg.norm(pts[raw[:, 0]] - pts[raw[:, 1]], axis=1)
        dots = np.einsum("ij,ij->i", nms[raw[:, 0]], nms[raw[:, 1]])
        ok = (d < p.leaf) & (dots > cos_thresh)
        lo = np.minimum(raw[ok, 0], raw[ok, 1])
        hi = np.maximum(raw[ok, 0], raw[ok, 1])
        candidates = sorted(zip(d[ok].tolist(), lo.tolist(), hi.tolist()))

    # greedy pairwise merging: a representative joins at most one merge, so
    # regular surfaces are thinned locally instead of collapsing transitively
    partner = np.full(n, -1, dtype=np.int64)
    for _, i, j in candidates:
        if partner[i] < 0 and partner[j] < 0:
            partner[i], partner[j] = j, i

    out_pts, out_nms = [], []
    for i in range(n):
        j = partner[i]
        if 0 <= j < i:
            continue  # emitted with its partner
        if j < 0:
            out_pts.append(pts[i])
            out_nms.append(nms[i])
        else:
            w = cc.weights[[i, j]].astype(np.float64)
            out_pts.append((pts[[i, j]] * w[:, None]).sum(axis=0) / w.sum())
            nsum = (nms[[i, j]] * w[:, None]).sum(axis=0)
            out_nms.append(_mean_direction(nsum, nms[i]))
    return OrientedPointCloud(np.asarray(out_pts), np.asarray(out_nms))


def preprocess_cloud(c: OrientedPointCloud, p: SubsampleParams) -> OrientedPointCloud:
    """Full preprocessing: clustered subsampling then neighbor-duplicate merge."""
    return filter_neighbor_pairs(subsample(c, p), p)


def grid_centroids(points, cell):
    """Plain voxel-grid centroid downsampling of bare points (no normals)."""
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) == 0:
        return pts
    cells, _ = voxel_coords(pts, cell)
    order = np.lexsort((cells[:, 2], cells[:, 1], cells[:, 0]))
    cells_s = cells[order]
    pts_s = pts[order]
    boundary = np.any(np.diff(cells_s, axis=0) != 0, axis=1)
    group = np.concatenate([[0], np.cumsum(boundary)])
    n_groups = group[-1] + 1
    sums = np.zeros((n_groups, 3))
    np.add.at(sums, group, pts_s)
    counts = np.bincount(group, minlength=n_groups).astype(np.float64)
    return sums / counts[:, None]

"""Per-reference-point voting, peak extraction, and pose clustering.

Every stride-th scene point acts as a reference: its pairs with all scene
points within the model diameter are featurized, looked up in the model
table (including quantization-noise neighbor keys), and each stored
(model point, alpha) entry votes into a (model point x alpha bin) grid.
The peak of the grid yields one pose hypothesis per reference point.

Reference points are processed in blocks so the per-point work runs as a
handful of large array operations instead of thousands of small ones.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .geometry import (
    OrientedPointCloud,
    RigidTransform,
    SpatialIndex,
    quat_from_rotation,
    rotation_distance,
    rotation_from_quat,
    rot_x,
)
from .ppf import (
    MIN_PAIR_DISTANCE,
    ModelTable,
    candidate_key_products,
    intermediate_frame,
    neighbor_candidates,
    pack_keys,
)

_BLOCK = 64  # reference points per vectorized block


@dataclass(frozen=True)
class MatchParams:
    scene_ref_stride: int = 5
    n_alpha_bins: int = 30
    cluster_trans_thresh: float | None = None   # None: 0.1 * model diameter
    cluster_rot_thresh: float = math.radians(12.0)
    max_hypotheses_out: int = 500

    def __post_init__(self):
        if self.scene_ref_stride < 1 or self.max_hypotheses_out < 1:
            raise ValueError("stride and output cap must be positive")
        if self.n_alpha_bins < 2:
            raise ValueError("n_alpha_bins must be >= 2")
        if self.cluster_trans_thresh is not None and self.cluster_trans_thresh <= 0:
            raise ValueError("cluster_trans_thresh must be positive")
        if self.cluster_rot_thresh <= 0:
            raise ValueError("cluster_rot_thresh must be positive")

    def resolved(self, model_diameter: float) -> "MatchParams":
        if self.cluster_trans_thresh is not None:
            return self
        return replace(self, cluster_trans_thresh=0.1 * model_diameter)


class HypothesisStatus(str, Enum):
    RAW = "raw"
    CLUSTERED = "clustered"
    RESCORED = "rescored"
    REFINED = "refined"
    REJECTED_CONSISTENCY = "rejected_consistency"
    REJECTED_EDGE = "rejected_edge"
    ACCEPTED = "accepted"


@dataclass
class PoseHypothesis:
    pose: RigidTransform
    votes: int
    scene_ref: int = -1
    score: float = 0.0
    status: HypothesisStatus = HypothesisStatus.RAW
    low_support: bool = False

    def __post_init__(self):
        if self.votes < 0:
            raise ValueError("votes must be non-negative")


def duplicate_suppression(seen: set, key, alpha_s_bin: int) -> bool:
    """True exactly once per (feature key, scene alpha bin) per reference point.

    `seen` is the per-reference vote log, cleared by the caller for each new
    reference point.
    """
    code = (int(key), int(alpha_s_bin))
    if code in seen:
        return False
    seen.add(code)
    return True


def _alpha_bins(alphas, n_bins):
    """Bin angles already in [-pi, pi] (atan2 output needs no wrapping)."""
    scaled = (alphas + np.pi) * (n_bins / (2 * np.pi))
    return np.minimum(scaled.astype(np.int64), n_bins - 1)


def _batched_frames(points, normals):
    """Intermediate frames for many (point, normal) pairs at once.

    Matches `intermediate_frame`: Rodrigues rotation about n x x_hat, with the
    antiparallel case handled as a half turn about z.
    """
    n = np.asarray(normals, dtype=np.float64)
    p = np.asarray(points, dtype=np.float64)
    count = len(n)
    c = n[:, 0].copy()
    R = np.zeros((count, 3, 3))

    near_id = c > 1.0 - 1e-12
    anti = c < -1.0 + 1e-12
    general = ~(near_id | anti)
    R[near_id] = np.eye(3)
    R[anti] = np.diag([-1.0, -1.0, 1.0])

    if general.any():
        ng = n[general]
        cg = np.clip(ng[:, 0], -1.0, 1.0)
        axis = np.cross(ng, np.broadcast_to([1.0, 0.0, 0.0], ng.shape))
        s = np.linalg.norm(axis, axis=1)
        k = axis / s[:, None]
        theta = np.arctan2(s, cg)
        K = np.zeros((len(ng), 3, 3))
        K[:, 0, 1] = -k[:, 2]
        K[:, 0, 2] = k[:, 1]
        K[:, 1, 0] = k[:, 2]
        K[:, 1, 2] = -k[:, 0]
        K[:, 2, 0] = -k[:, 1]
        K[:, 2, 1] = k[:, 0]
        K2 = K @ K
        R[general] = (np.eye(3)[None]
                      + np.sin(theta)[:, None, None] * K
                      + (1 - np.cos(theta))[:, None, None] * K2)
    t = -np.einsum("nij,nj->ni", R, p)
    return R, t


def _vote_block(table: ModelTable, scene: OrientedPointCloud, refs,
                neighbor_lists, p: MatchParams, neighbor_voting: bool,
                want_accumulators: bool = False):
    """Voting for a block of reference points in one vectorized pass.

    Returns (peak_cells, peak_votes, peak_alphas, frames) aligned with `refs`
    (peak vote 0 means no hypothesis), plus the dense per-ref accumulators
    when `want_accumulators` is set.
    """
    q = table.quant
    n_alpha = p.n_alpha_bins
    n_cells = len(table.model) * n_alpha
    n_refs = len(refs)
    refs = np.asarray(refs, dtype=np.int64)

    lens = np.array([len(l) for l in neighbor_lists], dtype=np.int64)
    empty = (np.zeros(n_refs, np.int64), np.zeros(n_refs, np.int64),
             np.zeros(n_refs), None)
    if lens.sum() == 0:
        acc = np.zeros((n_refs, n_cells), np.int64) if want_accumulators else None
        return (*empty[:3], _batched_frames(scene.points[refs], scene.normals[refs])), acc

    vref = np.repeat(np.arange(n_refs), lens)
    jidx = np.concatenate(neighbor_lists)
    keep = jidx != refs[vref]
    vref, jidx = vref[keep], jidx[keep]

    ref_pts = scene.points[refs]
    ref_nms = scene.normals[refs]
    d = scene.points[jidx] - ref_pts[vref]
    dist = np.linalg.norm(d, axis=1)
    keep = (dist > MIN_PAIR_DISTANCE) & (dist <= q.d_max)
    vref, jidx, d, dist = vref[keep], jidx[keep], d[keep], dist[keep]

    frames = _batched_frames(ref_pts, ref_nms)
    if len(dist) == 0:
        acc = np.zeros((n_refs, n_cells), np.int64) if want_accumulators else None
        return (*empty[:3], frames), acc

    dn = d / dist[:, None]
    n1 = ref_nms[vref]
    n2 = scene.normals[jidx]
    a1 = np.arccos(np.clip(np.einsum("ij,ij->i", n1, dn), -1.0, 1.0))
    a2 = np.arccos(np.clip(np.einsum("ij,ij->i", n2, dn), -1.0, 1.0))
    a3 = np.arccos(np.clip(np.einsum("ij,ij->i", n1, n2), -1.0, 1.0))

    R, t = frames
    p_local = np.einsum("nij,nj->ni", R[vref], scene.points[jidx]) + t[vref]
    alpha_s = np.arctan2(p_local[:, 2], p_local[:, 1])

    dims = neighbor_candidates(dist, a1, a2, a3, q)
    if neighbor_voting:
        rows, keys = candidate_key_products(dims, q)
    else:
        rows = np.arange(len(dist))
        keys = pack_keys(dims[0][0], dims[1][0], dims[2][0], dims[3][0], q)

    # one vote per (ref, key, scene alpha bin): first occurrence wins
    s_bins = _alpha_bins(alpha_s, n_alpha)
    key_space = q.n_dist_bins * q.n_angle_bins ** 3
    codes = ((vref[rows].astype(np.uint64) * np.uint64(key_space)
              + keys.astype(np.uint64)) * np.uint64(n_alpha)
             + s_bins[rows].astype(np.uint64))
    _, first = np.unique(codes, return_index=True)
    u_keys = keys[first]
    u_vref = vref[rows[first]]
    u_alpha_s = alpha_s[rows[first]]

    pos, found = table.lookup(u_keys)
    if not found.any():
        acc = np.zeros((n_refs, n_cells), np.int64) if want_accumulators else None
        return (*empty[:3], frames), acc
    starts = table.starts[pos[found]]
    counts = table.counts[pos[found]]
    total = int(counts.sum())
    gather = np.repeat(starts - np.concatenate([[0], np.cumsum(counts)[:-1]]),
                       counts) + np.arange(total)
    v_ref = np.repeat(u_vref[found], counts)
    v_alpha_s = np.repeat(u_alpha_s[found], counts)

    # rotation angle of each vote; the difference lies in (-2pi, 2pi) so a
    # branchy wrap beats the generic mod-based one here
    alpha = v_alpha_s - table.entry_alpha[gather]
    alpha[alpha >= np.pi] -= 2 * np.pi
    alpha[alpha < -np.pi] += 2 * np.pi
    cells = (table.entry_ref[gather].astype(np.int64) * n_alpha
             + _alpha_bins(alpha, n_alpha))

    acc = np.bincount(v_ref * n_cells + cells,
                      minlength=n_refs * n_cells).reshape(n_refs, n_cells)
    peak_cells = np.argmax(acc, axis=1)   # first max: lowest (model, alpha bin)
    peak_votes = np.take_along_axis(acc, peak_cells[:, None], axis=1)[:, 0]

    # median rotation angle among the peak-cell votes (robust to feature
    # collisions; a single alpha bin never straddles the -pi/pi wrap)
    sel = cells == peak_cells[v_ref]
    a_sel = alpha[sel]
    r_sel = v_ref[sel]
    order = np.lexsort((a_sel, r_sel))
    a_sorted = a_sel[order]
    r_sorted = r_sel[order]
    seg_counts = np.bincount(r_sorted, minlength=n_refs)
    seg_starts = np.concatenate([[0], np.cumsum(seg_counts)[:-1]])
    peak_alphas = np.zeros(n_refs)
    has = seg_counts > 0
    med_idx = seg_starts[has] + (seg_counts[has] - 1) // 2
    peak_alphas[has] = a_sorted[med_idx]

    return (peak_cells, peak_votes, peak_alphas, frames), (acc if want_accumulators else None)


def compute_accumulator(table: ModelTable, scene: OrientedPointCloud, ref: int,
                        p: MatchParams, neighbor_voting: bool = True):
    """2D vote grid (model points x alpha bins) for one reference point."""
    index = SpatialIndex(scene.points)
    lists = index.radius_query_many(scene.points[[ref]], table.quant.d_max)
    _, acc = _vote_block(table, scene, [ref], lists, p, neighbor_voting,
                         want_accumulators=True)
    return acc[0].reshape(len(table.model), p.n_alpha_bins)


def match_scene(table: ModelTable, scene: OrientedPointCloud, p: MatchParams,
                workers: int = 1, neighbor_voting: bool = True):
    """One pose hypothesis per scene reference point (unclustered).

    The scene must already be preprocessed with the model's leaf size.
    Results are independent of `workers` (blocks of reference points are pure,
    isolated work items; outputs are concatenated in reference order).
    """
    if len(scene) == 0:
        return []
    index = SpatialIndex(scene.points)
    refs = np.arange(0, len(scene), p.scene_ref_stride, dtype=np.int64)
    blocks = [refs[i:i + _BLOCK] for i in range(0, len(refs), _BLOCK)]

    def run_block(block):
        lists = index.radius_query_many(scene.points[block], table.quant.d_max)
        (peak_cells, peak_votes, peak_alphas, frames), _ = _vote_block(
            table, scene, block, lists, p, neighbor_voting)
        R, t = frames
        out = []
        for i, ref in enumerate(block):
            if peak_votes[i] == 0:
                continue
            m_idx = int(peak_cells[i]) // p.n_alpha_bins
            t_m = intermediate_frame(table.model.points[m_idx],
                                     table.model.normals[m_idx])
            frame = RigidTransform(R[i], t[i])
            pose = frame.inverse().compose(rot_x(peak_alphas[i])).compose(t_m)
            out.append(PoseHypothesis(pose=pose, votes=int(peak_votes[i]),
                                      scene_ref=int(ref)))
        return out

    if workers <= 1:
        results = [run_block(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_block, blocks))
    return [h for block in results for h in block]


def cluster_hypotheses(hyps, p: MatchParams):
    """Greedy vote-ordered clustering of nearby poses.

    A hypothesis joins the first cluster whose seed pose is within
    `cluster_trans_thresh` translation and `cluster_rot_thresh` geodesic
    rotation; cluster poses are vote-weighted averages (hemisphere-aligned
    quaternion mean for rotation).
    """
    if p.cluster_trans_thresh is None:
        raise ValueError("cluster_trans_thresh unresolved; call MatchParams.resolved")
    order = sorted(range(len(hyps)), key=lambda i: (-hyps[i].votes, hyps[i].scene_ref, i))
    seeds = []      # indices into hyps
    members = []    # lists of indices
    seed_trans = np.zeros((0, 3))
    for i in order:
        h = hyps[i]
        placed = False
        if len(seeds):
            near = np.nonzero(np.linalg.norm(
                seed_trans - h.pose.translation, axis=1) <= p.cluster_trans_thresh)[0]
            for ci in near:
                if rotation_distance(hyps[seeds[ci]].pose.rotation,
                                     h.pose.rotation) <= p.cluster_rot_thresh:
                    members[ci].append(i)
                    placed = True
                    break
        if not placed:
            seeds.append(i)
            members.append([i])
            seed_trans = np.vstack([seed_trans, h.pose.translation[None]])

    out = []
    for si, group in zip(seeds, members):
        w = np.array([max(hyps[i].votes, 1) for i in group], dtype=np.float64)
        trans = np.average([hyps[i].pose.translation for i in group], axis=0, weights=w)
        seed_q = quat_from_rotation(hyps[si].pose.rotation)
        qs = []
        for i in group:
            q = quat_from_rotation(hyps[i].pose.rotation)
            qs.append(-q if float(q @ seed_q) < 0 else q)
        q_mean = np.average(qs, axis=0, weights=w)
        pose = RigidTransform(rotation_from_quat(q_mean), trans)
        out.append(PoseHypothesis(
            pose=pose, votes=int(sum(hyps[i].votes for i in group)),
            scene_ref=hyps[si].scene_ref, status=HypothesisStatus.CLUSTERED))
    out.sort(key=lambda h: (-h.votes, h.scene_ref))
    return out[:p.max_hypotheses_out]

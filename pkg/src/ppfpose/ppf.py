"""Point pair features, their discretization, and the global model table.

A pair (p1, n1, p2, n2) is described by the 4-tuple
(|d|, angle(n1, d), angle(n2, d), angle(n1, n2)) with d = p2 - p1. Discretized
features index a lookup table from which (model reference point, rotation
angle) correspondences are recovered at match time.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .geometry import (
    OrientedPointCloud,
    RigidTransform,
    axis_angle_rotation,
    normalized,
)
from .preprocess import SubsampleParams, preprocess_cloud

MIN_PAIR_DISTANCE = 1e-9


@dataclass(frozen=True)
class QuantizationParams:
    """Feature binning. `d_max` is normally the subsampled model diameter and
    may be left as None until `build_model_table` resolves it.

    `noise_fraction` is the fraction of a bin width within which a value is
    considered close enough to a bin boundary that the adjacent bin also
    receives a vote.
    """

    d_max: float | None = None
    n_dist_bins: int = 20
    n_angle_bins: int = 15
    noise_fraction: float = 0.2

    def __post_init__(self):
        if self.n_dist_bins < 1 or self.n_angle_bins < 1:
            raise ValueError("bin counts must be >= 1")
        if not 0 <= self.noise_fraction < 0.5:
            raise ValueError("noise_fraction must be in [0, 0.5)")
        if self.d_max is not None and self.d_max <= 0:
            raise ValueError("d_max must be positive")


class PPF(NamedTuple):
    dist: float
    angle_n1_d: float
    angle_n2_d: float
    angle_n1_n2: float


class PPFKey(NamedTuple):
    b_dist: int
    b1: int
    b2: int
    b3: int


def compute_ppf(p1, n1, p2, n2) -> PPF:
    """Feature of a single ordered, oriented point pair."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    d = p2 - p1
    dist = float(np.linalg.norm(d))
    if dist <= MIN_PAIR_DISTANCE:
        raise ValueError("coincident points have no pair feature")
    dn = d / dist
    ang = lambda a, b: float(np.arccos(np.clip(np.dot(a, b), -1.0, 1.0)))
    return PPF(dist, ang(n1, dn), ang(n2, dn), ang(n1, n2))


def ppf_arrays(ref_point, ref_normal, points, normals):
    """Vectorized features of (ref -> points[i]) pairs.

    Returns (dist, a1, a2, a3) arrays; callers mask out near-zero distances.
    """
    d = points - ref_point
    dist = np.linalg.norm(d, axis=1)
    safe = np.maximum(dist, MIN_PAIR_DISTANCE)
    dn = d / safe[:, None]
    a1 = np.arccos(np.clip(dn @ ref_normal, -1.0, 1.0))
    a2 = np.arccos(np.clip(np.einsum("ij,ij->i", normals, dn), -1.0, 1.0))
    a3 = np.arccos(np.clip(normals @ ref_normal, -1.0, 1.0))
    return dist, a1, a2, a3


def discretize(f: PPF, q: QuantizationParams) -> PPFKey:
    b0, b1, b2, b3 = discretize_arrays(
        np.array([f.dist]), np.array([f.angle_n1_d]),
        np.array([f.angle_n2_d]), np.array([f.angle_n1_n2]), q)
    return PPFKey(int(b0[0]), int(b1[0]), int(b2[0]), int(b3[0]))


def discretize_arrays(dist, a1, a2, a3, q: QuantizationParams):
    if q.d_max is None:
        raise ValueError("d_max is unresolved")
    bd = np.minimum((dist * q.n_dist_bins / q.d_max).astype(np.int64), q.n_dist_bins - 1)
    ab = lambda a: np.minimum((a * q.n_angle_bins / np.pi).astype(np.int64), q.n_angle_bins - 1)
    return bd, ab(a1), ab(a2), ab(a3)


def pack_keys(b0, b1, b2, b3, q: QuantizationParams):
    """Dense key packing: b_dist * n_angle^3 + b1 * n_angle^2 + b2 * n_angle + b3."""
    na = np.uint32(q.n_angle_bins)
    return (((np.asarray(b0, dtype=np.uint32) * na + b1) * na + b2) * na + b3)


def unpack_key(packed, q: QuantizationParams) -> PPFKey:
    na = q.n_angle_bins
    b3 = packed % na
    packed //= na
    b2 = packed % na
    packed //= na
    b1 = packed % na
    return PPFKey(int(packed // na), int(b1), int(b2), int(b3))


def _dim_neighbors(values, bins, bin_width, n_bins, noise_fraction):
    """Adjacent-bin candidates per dimension.

    The +-1 bin qualifies when the continuous value lies within
    noise_fraction * bin_width of that boundary of its (clamped) bin; bins
    outside [0, n_bins) are clamped away (angles do not wrap).
    """
    margin = noise_fraction * bin_width
    low_off = values - bins * bin_width
    high_off = (bins + 1) * bin_width - values
    down = (low_off <= margin) & (bins > 0)
    up = (high_off <= margin) & (bins < n_bins - 1)
    # noise_fraction < 0.5 means at most one side qualifies
    alt = np.where(down, bins - 1, np.where(up, bins + 1, bins))
    return down | up, alt


def neighbor_candidates(dist, a1, a2, a3, q: QuantizationParams):
    """Per-dimension (base bin, has-alternative, alternative bin) arrays."""
    bd, b1, b2, b3 = discretize_arrays(dist, a1, a2, a3, q)
    wd = q.d_max / q.n_dist_bins
    wa = np.pi / q.n_angle_bins
    dims = []
    for vals, bins, width, n in ((dist, bd, wd, q.n_dist_bins),
                                 (a1, b1, wa, q.n_angle_bins),
                                 (a2, b2, wa, q.n_angle_bins),
                                 (a3, b3, wa, q.n_angle_bins)):
        has_alt, alt = _dim_neighbors(vals, bins, width, n, q.noise_fraction)
        dims.append((bins, has_alt, alt))
    return dims


def neighbor_keys(f: PPF, q: QuantizationParams) -> set[PPFKey]:
    """Base key plus the boundary-adjacent keys (1..16 keys total).

    Each of the four dimensions contributes its adjacent bin only when the
    continuous value is within `noise_fraction` of a bin width of that
    boundary; the result is the Cartesian product of per-dimension candidates.
    """
    dims = neighbor_candidates(
        np.array([f.dist]), np.array([f.angle_n1_d]),
        np.array([f.angle_n2_d]), np.array([f.angle_n1_n2]), q)
    choices = []
    for bins, has_alt, alt in dims:
        opts = [int(bins[0])]
        if bool(has_alt[0]):
            opts.append(int(alt[0]))
        choices.append(opts)
    keys = set()
    for c0 in choices[0]:
        for c1 in choices[1]:
            for c2 in choices[2]:
                for c3 in choices[3]:
                    keys.add(PPFKey(c0, c1, c2, c3))
    return keys


def candidate_key_products(dims, q: QuantizationParams):
    """Vectorized Cartesian product of per-dimension candidate bins.

    Returns (row_indices, packed_keys): one entry per (pair, key candidate),
    with the base key emitted for every pair (combo 0).
    """
    n = len(dims[0][0])
    rows_out = []
    keys_out = []
    base_idx = np.arange(n)
    for combo in range(16):
        use = [(combo >> d) & 1 for d in range(4)]
        mask = np.ones(n, dtype=bool)
        comps = []
        for d in range(4):
            bins, has_alt, alt = dims[d]
            if use[d]:
                mask &= has_alt
                comps.append(alt)
            else:
                comps.append(bins)
        if not mask.any():
            continue
        idx = base_idx[mask]
        rows_out.append(idx)
        keys_out.append(pack_keys(comps[0][mask], comps[1][mask],
                                  comps[2][mask], comps[3][mask], q))
    return np.concatenate(rows_out), np.concatenate(keys_out)


def intermediate_frame(p, n) -> RigidTransform:
    """Transform taking point p to the origin and its normal to the +x axis.

    The free roll about x is fixed by rotating about n x x_hat (Rodrigues);
    when n is nearly antiparallel to x_hat, a half turn about z is used.
    """
    p = np.asarray(p, dtype=np.float64)
    n = normalized(np.asarray(n, dtype=np.float64))
    x = np.array([1.0, 0.0, 0.0])
    c = float(n @ x)
    if c > 1.0 - 1e-12:
        R = np.eye(3)
    elif c < -1.0 + 1e-12:
        R = np.diag([-1.0, -1.0, 1.0])
    else:
        axis = np.cross(n, x)
        angle = np.arccos(np.clip(c, -1.0, 1.0))
        R = axis_angle_rotation(axis, angle)
    return RigidTransform(R, -R @ p)


def alpha_angle(frame: RigidTransform, p_other) -> float:
    """Rotation angle about +x that carries the paired point into {z=0, y>=0}.

    With p' = frame @ p_other this is atan2(p'.z, p'.y); rotating p' by
    -alpha about x lands it in the half-plane. Points on the x axis get 0.
    """
    p = frame.apply(np.asarray(p_other, dtype=np.float64))
    return float(np.arctan2(p[2], p[1]))


def alpha_angles(frame: RigidTransform, points) -> np.ndarray:
    p = frame.apply(points)
    return np.arctan2(p[:, 2], p[:, 1])


def wrap_angle(a):
    """Wrap angle(s) into [-pi, pi)."""
    return np.mod(np.asarray(a) + np.pi, 2 * np.pi) - np.pi


class ModelTable:
    """Immutable lookup table: packed feature key -> (reference index, alpha).

    Entries are stored CSR-style (sorted unique keys + offsets into flat
    ref/alpha arrays); the layout doubles as the canonical serialized order.
    """

    def __init__(self, model: OrientedPointCloud, quant: QuantizationParams,
                 leaf: float, keys, starts, counts, entry_ref, entry_alpha):
        self.model = model
        self.quant = quant
        self.leaf = float(leaf)
        self.keys = np.asarray(keys, dtype=np.uint32)
        self.starts = np.asarray(starts, dtype=np.int64)
        self.counts = np.asarray(counts, dtype=np.int64)
        self.entry_ref = np.asarray(entry_ref, dtype=np.uint32)
        self.entry_alpha = np.asarray(entry_alpha, dtype=np.float32)

    @property
    def n_entries(self):
        return len(self.entry_ref)

    def lookup(self, packed_keys):
        """Slices (position, found-mask) for a batch of packed keys."""
        packed_keys = np.asarray(packed_keys, dtype=np.uint32)
        if len(self.keys) == 0:
            return np.zeros(len(packed_keys), dtype=np.int64), np.zeros(len(packed_keys), dtype=bool)
        pos = np.searchsorted(self.keys, packed_keys)
        pos_c = np.minimum(pos, len(self.keys) - 1)
        return pos_c, self.keys[pos_c] == packed_keys

    def entries_for_key(self, key: PPFKey):
        """(ref_index, alpha) pairs stored under one key; empty if absent."""
        packed = np.asarray([pack_keys(key.b_dist, key.b1, key.b2, key.b3, self.quant)])
        pos, found = self.lookup(packed)
        if not found[0]:
            return np.empty(0, np.uint32), np.empty(0, np.float32)
        s, c = self.starts[pos[0]], self.counts[pos[0]]
        return self.entry_ref[s:s + c], self.entry_alpha[s:s + c]


def build_model_table(model_raw: OrientedPointCloud, sp: SubsampleParams,
                      q: QuantizationParams = QuantizationParams()) -> ModelTable:
    """Preprocess the model and hash every ordered point pair.

    d_max resolves to the subsampled model diameter. The subsampled cloud is
    rounded to f32 so the in-memory table matches its serialized form exactly.
    """
    model = preprocess_cloud(model_raw, sp)
    if len(model) < 2:
        raise ValueError("fewer than 2 model points survive preprocessing")
    # f32 canonicalization: after this the cloud is exactly what the PPFM file
    # stores, so built and reloaded tables behave identically (normals are not
    # renormalized again; f32 rounding keeps them unit within ~2e-7)
    pts = model.points.astype(np.float32).astype(np.float64)
    nms = model.normals.astype(np.float32).astype(np.float64)
    model = OrientedPointCloud(pts, nms)
    quant = replace(q, d_max=model.diameter)

    n = len(model)
    all_keys, all_refs, all_alphas = [], [], []
    for i in range(n):
        dist, a1, a2, a3 = ppf_arrays(pts[i], nms[i], pts, nms)
        mask = (dist > MIN_PAIR_DISTANCE) & (dist <= quant.d_max)
        mask[i] = False
        if not mask.any():
            continue
        b = discretize_arrays(dist[mask], a1[mask], a2[mask], a3[mask], quant)
        all_keys.append(pack_keys(*b, quant))
        frame = intermediate_frame(pts[i], nms[i])
        all_alphas.append(alpha_angles(frame, pts[mask]))
        all_refs.append(np.full(mask.sum(), i, dtype=np.uint32))

    keys = np.concatenate(all_keys)
    refs = np.concatenate(all_refs)
    alphas = np.concatenate(all_alphas).astype(np.float32)

    order = np.argsort(keys, kind="stable")
    keys, refs, alphas = keys[order], refs[order], alphas[order]
    uniq, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    return ModelTable(model, quant, sp.leaf, uniq, starts, counts, refs, alphas)


PPFM_MAGIC = b"PPFM"
PPFM_VERSION = 1
_HEADER = struct.Struct("<4sHHHddId")  # magic, version, dist bins, angle bins,
                                       # noise fraction, leaf, points, diameter


def serialize_table(table: ModelTable) -> bytes:
    """PPFM binary: header, cloud as 6 x f32 per point, u64 count, then flat
    (key u32, ref u32, alpha f32) records in canonical key order."""
    out = [_HEADER.pack(PPFM_MAGIC, PPFM_VERSION, table.quant.n_dist_bins,
                        table.quant.n_angle_bins, table.quant.noise_fraction,
                        table.leaf, len(table.model), table.quant.d_max)]
    cloud = np.hstack([table.model.points, table.model.normals]).astype("<f4")
    out.append(cloud.tobytes())
    out.append(struct.pack("<Q", table.n_entries))
    rec = np.empty(table.n_entries, dtype=[("key", "<u4"), ("ref", "<u4"), ("alpha", "<f4")])
    rec["key"] = np.repeat(table.keys, table.counts)
    rec["ref"] = table.entry_ref
    rec["alpha"] = table.entry_alpha
    out.append(rec.tobytes())
    return b"".join(out)


def deserialize_table(data: bytes) -> ModelTable:
    if len(data) < _HEADER.size:
        raise ValueError("truncated model table (missing header)")
    magic, version, n_dist, n_angle, noise_frac, leaf, n_points, diameter = \
        _HEADER.unpack_from(data, 0)
    if magic != PPFM_MAGIC:
        raise ValueError("not a PPFM file (bad magic)")
    if version != PPFM_VERSION:
        raise ValueError(f"unsupported PPFM version {version}")
    off = _HEADER.size
    cloud_bytes = n_points * 6 * 4
    if len(data) < off + cloud_bytes + 8:
        raise ValueError("truncated model table (cloud section)")
    cloud = np.frombuffer(data, dtype="<f4", count=n_points * 6, offset=off)
    cloud = cloud.reshape(n_points, 6).astype(np.float64)
    off += cloud_bytes
    (n_entries,) = struct.unpack_from("<Q", data, off)
    off += 8
    rec_dtype = np.dtype([("key", "<u4"), ("ref", "<u4"), ("alpha", "<f4")])
    if len(data) != off + n_entries * rec_dtype.itemsize:
        raise ValueError("truncated or oversized model table (entry section)")
    rec = np.frombuffer(data, dtype=rec_dtype, count=n_entries, offset=off)

    model = OrientedPointCloud(cloud[:, :3], cloud[:, 3:], diameter=diameter)
    quant = QuantizationParams(d_max=diameter, n_dist_bins=n_dist,
                               n_angle_bins=n_angle, noise_fraction=noise_frac)
    keys = rec["key"]
    uniq, starts, counts = np.unique(keys, return_index=True, return_counts=True)
    if len(keys) and np.any(np.diff(keys.astype(np.int64)) < 0):
        raise ValueError("model table entries are not in canonical key order")
    return ModelTable(model, quant, leaf, uniq, starts, counts,
                      rec["ref"].copy(), rec["alpha"].copy())


def save_table(table: ModelTable, path):
    with open(path, "wb") as fh:
        fh.write(serialize_table(table))


def load_table(path) -> ModelTable:
    with open(path, "rb") as fh:
        return deserialize_table(fh.read())

"""Core geometric types: rigid transforms, oriented point clouds, spatial index.

All coordinates are in millimeters.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

ROTATION_TOL = 1e-6
UNIT_TOL = 1e-6


def _as_array(a, shape_last=3):
    arr = np.asarray(a, dtype=np.float64)
    if arr.shape[-1] != shape_last:
        raise ValueError(f"expected trailing dimension {shape_last}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite components")
    return arr


def normalized(v):
    """Return v scaled to unit length (last axis)."""
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(n < 1e-12):
        raise ValueError("cannot normalize near-zero vector")
    return v / n


class RigidTransform:
    """Proper rigid motion: x -> R @ x + t.

    The rotation must be orthonormal with determinant +1 (checked on
    construction within ROTATION_TOL).
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation):
        R = _as_array(rotation).reshape(3, 3)
        t = _as_array(translation).reshape(3)
        err = np.abs(R @ R.T - np.eye(3)).max()
        if err > ROTATION_TOL:
            raise ValueError(f"rotation not orthonormal (max deviation {err:.2e})")
        if abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("rotation determinant is not +1 (improper rotation)")
        self.rotation = R
        self.translation = t

    @staticmethod
    def identity():
        return RigidTransform(np.eye(3), np.zeros(3))

    def apply(self, points):
        """Map point(s) of shape (3,) or (n, 3)."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def apply_normals(self, normals):
        """Rotate direction(s) without translating."""
        n = np.asarray(normals, dtype=np.float64)
        return n @ self.rotation.T

    def compose(self, other):
        """self after other: (self @ other)(x) == self(other(x))."""
        return RigidTransform(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )

    def __matmul__(self, other):
        if isinstance(other, RigidTransform):
            return self.compose(other)
        return NotImplemented

    def inverse(self):
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation)

    def matrix(self):
        """4x4 homogeneous matrix."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __repr__(self):
        return f"RigidTransform(t={self.translation.round(3).tolist()})"


def rot_x(angle):
    """Rotation about the +x axis by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    return RigidTransform(np.array([[1.0, 0, 0], [0, c, -s], [0, s, c]]), np.zeros(3))


def axis_angle_rotation(axis, angle):
    """Rodrigues rotation matrix about a (not necessarily unit) axis."""
    a = normalized(axis)
    c, s = np.cos(angle), np.sin(angle)
    K = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.eye(3) + s * K + (1 - c) * (K @ K)


def quat_from_rotation(R):
    """Unit quaternion (w, x, y, z) for a rotation matrix."""
    R = np.asarray(R, dtype=np.float64)
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] >= R[1, 1] and R[0, 0] >= R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] >= R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    return q / np.linalg.norm(q)


def rotation_from_quat(q):
    """Rotation matrix for a quaternion (w, x, y, z); renormalizes the input."""
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, in [0, pi]."""
    tr = np.trace(np.asarray(R))
    return float(np.arccos(np.clip((tr - 1.0) / 2.0, -1.0, 1.0)))


def rotation_distance(Ra, Rb):
    """Geodesic angle between two rotations."""
    return rotation_angle(np.asarray(Ra).T @ np.asarray(Rb))


def max_pairwise_distance(points):
    """Exact O(n^2) diameter of a point set. Meant for subsampled clouds."""
    pts = _as_array(points)
    n = len(pts)
    if n < 2:
        return 0.0
    best = 0.0
    chunk = max(1, int(2e7) // max(n, 1))
    for i0 in range(0, n, chunk):
        d = pts[i0:i0 + chunk, None, :] - pts[None, :, :]
        best = max(best, float(np.sqrt((d * d).sum(axis=2).max())))
    return best


class OrientedPointCloud:
    """Points with unit normals; the common currency of the pipeline.

    `diameter` (max pairwise distance) is computed lazily and cached.
    """

    def __init__(self, points, normals, diameter=None):
        self.points = _as_array(points).reshape(-1, 3)
        self.normals = _as_array(normals).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals must have the same length")
        if len(self.normals):
            norm_err = np.abs(np.linalg.norm(self.normals, axis=1) - 1.0).max()
            if norm_err > UNIT_TOL:
                raise ValueError(f"normals are not unit length (max deviation {norm_err:.2e})")
        self._diameter = diameter

    def __len__(self):
        return len(self.points)

    @property
    def diameter(self):
        if self._diameter is None:
            self._diameter = max_pairwise_distance(self.points)
        return self._diameter


def apply_transform(t: RigidTransform, c: OrientedPointCloud) -> OrientedPointCloud:
    """Rigidly move a cloud; the cached diameter is carried over unchanged."""
    return OrientedPointCloud(t.apply(c.points), t.apply_normals(c.normals),
                              diameter=c._diameter)


class SpatialIndex:
    """kd-tree over a fixed point set; built once, safe for concurrent queries."""

    def __init__(self, points):
        self.points = _as_array(points).reshape(-1, 3)
        self._tree = cKDTree(self.points)

    def radius_query(self, center, r):
        """Indices of all points with |p - center| <= r, ascending."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        idx = self._tree.query_ball_point(np.asarray(center, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def radius_query_many(self, centers, r):
        """Per-center sorted index lists for a batch of query points."""
        if r < 0:
            raise ValueError("radius must be non-negative")
        lists = self._tree.query_ball_point(
            np.asarray(centers, dtype=np.float64), r, return_sorted=True)
        return [np.asarray(l, dtype=np.int64) for l in lists]

    def knn(self, queries, k):
        dist, idx = self._tree.query(np.asarray(queries, dtype=np.float64), k=k)
        return dist, idx


def estimate_normals(points, k=20, viewpoint=(0.0, 0.0, 0.0)):
    """Per-point PCA normals oriented toward `viewpoint`.

    The normal is the smallest-eigenvalue eigenvector of the covariance of the
    k nearest neighbors (self included), flipped so that it points toward the
    viewpoint. Points with a degenerate neighborhood (zero covariance) are
    dropped from the returned cloud.
    """
    pts = _as_array(points).reshape(-1, 3)
    if k < 3:
        raise ValueError("k must be >= 3")
    if len(pts) < k:
        raise ValueError(f"need at least k={k} points, got {len(pts)}")
    vp = _as_array(viewpoint).reshape(3)

    tree = cKDTree(pts)
    _, idx = tree.query(pts, k=k, workers=-1)
    nb = pts[idx]                                  # (n, k, 3)
    centered = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", centered, centered)
    traces = np.trace(cov, axis1=1, axis2=2)
    valid = traces > 1e-12

    w, v = np.linalg.eigh(cov)
    normals = v[:, :, 0]                           # smallest eigenvalue first
    flip = np.einsum("ni,ni->n", normals, vp - pts) < 0
    normals[flip] = -normals[flip]
    normals = normals / np.linalg.norm(normals, axis=1, keepdims=True)
    return OrientedPointCloud(pts[valid], normals[valid])


class TriMesh:
    """Triangle mesh with helpers for normals and surface sampling."""

    def __init__(self, vertices, faces):
        self.vertices = _as_array(vertices).reshape(-1, 3)
        self.faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and self.faces.max() >= len(self.vertices):
            raise ValueError("face index out of range")

    def face_normals(self):
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        lens = np.linalg.norm(n, axis=1, keepdims=True)
        lens[lens < 1e-12] = 1.0
        return n / lens

    def face_areas(self):
        v = self.vertices
        f = self.faces
        n = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    def vertex_normals(self):
        """Area-weighted average of adjacent face normals, unit length."""
        fn = self.face_normals() * self.face_areas()[:, None]
        vn = np.zeros_like(self.vertices)
        for c in range(3):
            np.add.at(vn, self.faces[:, c], fn)
        lens = np.linalg.norm(vn, axis=1, keepdims=True)
        lens[lens < 1e-12] = 1.0
        return vn / lens

    def sample_surface(self, n, rng):
        """Uniform area-weighted surface samples with face normals."""
        areas = self.face_areas()
        probs = areas / areas.sum()
        fi = rng.choice(len(self.faces), size=n, p=probs)
        u = rng.random(n)
        v = rng.random(n)
        swap = u + v > 1
        u[swap] = 1 - u[swap]
        v[swap] = 1 - v[swap]
        tri = self.vertices[self.faces[fi]]
        pts = tri[:, 0] + u[:, None] * (tri[:, 1] - tri[:, 0]) + v[:, None] * (tri[:, 2] - tri[:, 0])
        return pts, self.face_normals()[fi]

    def transformed(self, t: RigidTransform):
        return TriMesh(t.apply(self.vertices), self.faces)

    @property
    def diameter(self):
        return max_pairwise_distance(self.vertices)

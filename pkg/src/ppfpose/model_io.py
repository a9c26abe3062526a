"""Model-file ingestion: PLY to oriented cloud (plus mesh when faces exist)."""

from __future__ import annotations

import numpy as np

from .geometry import OrientedPointCloud, TriMesh, estimate_normals
from .ply import load_ply


def load_model_file(path, surface_samples=20000, seed=0, normal_k=20):
    """Load a PLY model as (OrientedPointCloud, TriMesh | None).

    With faces present, the cloud is a seeded area-weighted surface sampling
    with face normals (mesh vertices alone are usually too sparse to pair).
    Without faces, vertices are used directly; missing normals are estimated
    by PCA and oriented away from the centroid.
    """
    vertices, normals, faces = load_ply(path)
    if faces is not None and len(faces):
        mesh = TriMesh(vertices, faces)
        rng = np.random.default_rng(seed)
        pts, nms = mesh.sample_surface(surface_samples, rng)
        return OrientedPointCloud(pts, nms), mesh

    if normals is not None:
        lens = np.linalg.norm(normals, axis=1, keepdims=True)
        if lens.min() < 1e-9:
            raise ValueError(f"{path}: zero-length vertex normal")
        return OrientedPointCloud(vertices, normals / lens), None

    cloud = estimate_normals(vertices, k=min(normal_k, max(3, len(vertices) - 1)),
                             viewpoint=vertices.mean(axis=0))
    # orient outward for a closed scan: away from the centroid
    centroid = cloud.points.mean(axis=0)
    flip = np.einsum("ij,ij->i", cloud.normals, cloud.points - centroid) < 0
    nms = cloud.normals.copy()
    nms[flip] = -nms[flip]
    return OrientedPointCloud(cloud.points, nms), None

"""End-to-end detection: depth image in, best pose hypothesis out."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, DepthImage, back_project
from .config import PipelineConfig, resolved_config_dict
from .geometry import OrientedPointCloud, estimate_normals
from .matching import PoseHypothesis, cluster_hypotheses, match_scene
from .ppf import ModelTable
from .preprocess import grid_centroids, preprocess_cloud
from .render import ObjectModel
from .verification import verify_pipeline


@dataclass
class DetectionResult:
    hypothesis: PoseHypothesis | None
    n_raw: int
    n_clusters: int
    timings_ms: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def found(self):
        return self.hypothesis is not None


def prepare_scene(depth: DepthImage, cam: CameraIntrinsics, leaf: float,
                  cfg: PipelineConfig) -> OrientedPointCloud:
    """Back-project a depth image and preprocess it with the model's leaf.

    The raw cloud is first thinned on a half-leaf grid (centroid averaging
    knocks down sensor noise), normals are then estimated by kNN PCA with the
    camera origin as the viewpoint, and the normal-aware subsampling runs at
    the model's absolute leaf size.
    """
    pts = back_project(depth, cam)[depth.valid_mask()]
    if len(pts) == 0:
        return OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    thin = grid_centroids(pts, 0.5 * leaf)
    if len(thin) < cfg.normal_k:
        return OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
    cloud = estimate_normals(thin, k=cfg.normal_k, viewpoint=(0.0, 0.0, 0.0))
    if len(cloud) == 0:
        return cloud
    return preprocess_cloud(cloud, cfg.subsample_params(leaf))


def detect_object(table: ModelTable, depth: DepthImage, cam: CameraIntrinsics,
                  cfg: PipelineConfig, mesh=None, workers: int = 1) -> DetectionResult:
    """Full pipeline: preprocess, vote, cluster, verify; timings per stage."""
    model = ObjectModel(cloud=table.model, leaf=table.leaf, mesh=mesh)
    match_p = cfg.match.resolved(table.model.diameter)
    verify_p = cfg.verify.resolved(table.leaf)
    timings = {}

    t0 = time.perf_counter()
    scene = prepare_scene(depth, cam, table.leaf, cfg)
    timings["preprocess"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    raw = match_scene(table, scene, match_p, workers=workers)
    timings["match"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    clusters = cluster_hypotheses(raw, match_p) if raw else []
    timings["cluster"] = (time.perf_counter() - t0) * 1000

    t0 = time.perf_counter()
    best = verify_pipeline(clusters, depth, cam, model, verify_p)
    timings["verify"] = (time.perf_counter() - t0) * 1000
    timings["total"] = sum(timings.values())

    return DetectionResult(
        hypothesis=best, n_raw=len(raw), n_clusters=len(clusters),
        timings_ms=timings,
        config=resolved_config_dict(cfg, table.leaf, table.model.diameter))

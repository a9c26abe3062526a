import math

import numpy as np
import pytest

from ppfpose.geometry import OrientedPointCloud
from ppfpose.preprocess import (
    SubsampleParams,
    filter_neighbor_pairs,
    grid_centroids,
    preprocess_cloud,
    subsample,
)


def make_cloud(pts, nms):
    pts = np.asarray(pts, dtype=float)
    nms = np.asarray(nms, dtype=float)
    nms = nms / np.linalg.norm(nms, axis=1, keepdims=True)
    return OrientedPointCloud(pts, nms)


def random_cloud(rng, n, extent=50.0):
    nms = rng.normal(size=(n, 3))
    nms /= np.linalg.norm(nms, axis=1, keepdims=True)
    return OrientedPointCloud(rng.uniform(0, extent, (n, 3)), nms)


def replay_greedy_clustering(points, normals, cells, angle):
    """Independent re-implementation of the per-voxel greedy clustering."""
    order = np.lexsort((np.arange(len(points)), cells[:, 2], cells[:, 1], cells[:, 0]))
    assignments = {}
    clusters = {}  # (cell tuple, local index) -> normal sum
    for j in order:
        key = tuple(cells[j])
        local = clusters.setdefault(key, [])
        placed = None
        for ci, s in enumerate(local):
            norm = np.linalg.norm(s)
            if norm < 1e-12 or np.dot(normals[j], s / norm) >= math.cos(angle):
                placed = ci
                break
        if placed is None:
            local.append(normals[j].copy())
            placed = len(local) - 1
        else:
            local[placed] = local[placed] + normals[j]
        assignments[j] = (key, placed)
    return assignments


class TestSubsample:
    def test_single_cluster_voxel(self):
        rng = np.random.default_rng(0)
        pts = rng.uniform(0, 0.9, (10, 3))
        cloud = make_cloud(pts, np.tile([0, 0, 1.0], (10, 1)))
        cc = subsample(cloud, SubsampleParams(leaf=1.0))
        assert len(cc.cloud) == 1
        np.testing.assert_allclose(cc.cloud.points[0], pts.mean(axis=0))
        np.testing.assert_allclose(cc.cloud.normals[0], [0, 0, 1])

    def test_two_normal_groups_kept(self):
        # 90 degrees apart > 30 degrees: both survive in one voxel
        pts = np.full((8, 3), 0.4)
        nms = [[0, 0, 1]] * 4 + [[1, 0, 0]] * 4
        cc = subsample(make_cloud(pts, nms), SubsampleParams(leaf=1.0))
        assert len(cc.cloud) == 2

    def test_empty_input(self):
        cloud = OrientedPointCloud(np.zeros((0, 3)), np.zeros((0, 3)))
        with pytest.raises(ValueError):
            subsample(cloud, SubsampleParams(leaf=1.0))

    def test_membership_replay(self):
        rng = np.random.default_rng(1)
        cloud = random_cloud(rng, 300, extent=10.0)
        params = SubsampleParams(leaf=2.5)
        cc = subsample(cloud, params)
        cells = np.floor((cloud.points - cloud.points.min(axis=0)) / params.leaf).astype(int)
        assignments = replay_greedy_clustering(
            cloud.points, cloud.normals, cells, params.normal_cluster_angle)
        n_clusters = len({v for v in assignments.values()})
        assert n_clusters == len(cc.cloud)

    def test_degenerate_angle_is_plain_voxel_grid(self):
        rng = np.random.default_rng(2)
        cloud = random_cloud(rng, 500, extent=20.0)
        cc = subsample(cloud, SubsampleParams(leaf=4.0, normal_cluster_angle=math.pi))
        cells = np.floor((cloud.points - cloud.points.min(axis=0)) / 4.0).astype(int)
        n_occupied = len(np.unique(cells, axis=0))
        assert len(cc.cloud) == n_occupied

    def test_output_counts_and_unit_normals(self):
        rng = np.random.default_rng(3)
        cloud = random_cloud(rng, 400)
        cc = subsample(cloud, SubsampleParams(leaf=5.0))
        assert 1 <= len(cc.cloud) <= 400
        np.testing.assert_allclose(np.linalg.norm(cc.cloud.normals, axis=1), 1.0, atol=1e-9)

    def test_deterministic(self):
        rng = np.random.default_rng(4)
        cloud = random_cloud(rng, 300)
        p = SubsampleParams(leaf=6.0)
        a = subsample(cloud, p)
        b = subsample(cloud, p)
        np.testing.assert_array_equal(a.cloud.points, b.cloud.points)
        np.testing.assert_array_equal(a.cluster_id, b.cluster_id)


class TestFilterNeighborPairs:
    def test_merges_near_duplicates_across_cells(self):
        # grid is anchored at the cloud min corner, so include an anchor point;
        # the other two straddle a voxel boundary 0.4*leaf apart, same normal
        pts = [[0.0, 0.0, 0.0], [1.9, 0.5, 0.5], [2.3, 0.5, 0.5]]
        cloud = make_cloud(pts, [[1, 0, 0], [0, 0, 1], [0, 0, 1]])
        p = SubsampleParams(leaf=1.0)
        cc = subsample(cloud, p)
        assert len(cc.cloud) == 3
        merged = filter_neighbor_pairs(cc, p)
        assert len(merged) == 2

    def test_keeps_discriminative_pair(self):
        pts = [[0.9, 0.5, 0.5], [1.3, 0.5, 0.5]]
        cloud = make_cloud(pts, [[0, 0, 1], [1, 0, 0]])
        p = SubsampleParams(leaf=1.0)
        out = filter_neighbor_pairs(subsample(cloud, p), p)
        assert len(out) == 2

    def test_isolated_voxel_untouched(self):
        pts = [[0.5, 0.5, 0.5], [10.5, 10.5, 10.5]]
        cloud = make_cloud(pts, [[0, 0, 1], [0, 0, 1]])
        p = SubsampleParams(leaf=1.0)
        out = filter_neighbor_pairs(subsample(cloud, p), p)
        assert len(out) == 2

    def test_merge_disabled(self):
        pts = [[0.0, 0.0, 0.0], [1.9, 0.5, 0.5], [2.3, 0.5, 0.5]]
        cloud = make_cloud(pts, [[1, 0, 0], [0, 0, 1], [0, 0, 1]])
        p = SubsampleParams(leaf=1.0, merge_neighbor_clusters=False)
        out = filter_neighbor_pairs(subsample(cloud, p), p)
        assert len(out) == 3

    def test_merge_weighted_by_source_counts(self):
        # 3 source points behind the left representative vs 1 behind the right
        pts = [[0.0, 0.0, 0.0],
               [1.8, 0.5, 0.5], [1.85, 0.5, 0.5], [1.9, 0.5, 0.5],
               [2.1, 0.5, 0.5]]
        cloud = make_cloud(pts, [[1, 0, 0]] + [[0, 0, 1]] * 4)
        p = SubsampleParams(leaf=1.0)
        out = filter_neighbor_pairs(subsample(cloud, p), p)
        assert len(out) == 2
        merged_x = sorted(out.points[:, 0])[-1]
        assert merged_x == pytest.approx((3 * 1.85 + 1 * 2.1) / 4)


class TestProperties:
    def test_never_grows_and_normals_stay_unit(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            cloud = random_cloud(rng, 200)
            out = preprocess_cloud(cloud, SubsampleParams(leaf=rng.uniform(2, 10)))
            assert 1 <= len(out) <= len(cloud)
            np.testing.assert_allclose(np.linalg.norm(out.normals, axis=1), 1.0, atol=1e-9)

    def test_grid_centroids_matches_manual(self):
        pts = np.array([[0.1, 0.1, 0.1], [0.2, 0.2, 0.2], [5.0, 5.0, 5.0]])
        out = grid_centroids(pts, 1.0)
        assert len(out) == 2
        np.testing.assert_allclose(out[0], [0.15, 0.15, 0.15])

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SubsampleParams(leaf=0.0)
        with pytest.raises(ValueError):
            SubsampleParams(leaf=1.0, normal_cluster_angle=0.0)
        with pytest.raises(ValueError):
            SubsampleParams(leaf=1.0, normal_cluster_angle=3.5)

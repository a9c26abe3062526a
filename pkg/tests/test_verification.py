import math

import numpy as np

from ppfpose.camera import DepthImage
from ppfpose.fixtures import make_plane_mesh
from ppfpose.geometry import RigidTransform, axis_angle_rotation, rotation_distance
from ppfpose.matching import HypothesisStatus, PoseHypothesis
from ppfpose.render import ObjectModel, render_mesh_depth
from ppfpose.synth import Distractor, SceneSpec, generate_scene
from ppfpose.verification import (
    VerifyParams,
    consistency_filter,
    edge_overlap_filter,
    projective_icp,
    rescore,
    scene_edge_map,
    silhouette_of,
    verify_pipeline,
)


def hyp(pose, votes=10):
    return PoseHypothesis(pose=pose, votes=votes)


def clean_scene(model, pose, camera):
    img, _ = generate_scene(SceneSpec(model_id="m", pose=pose, camera=camera), model)
    return img


class TestRescore:
    def test_self_consistency(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        assert rescore(hyp(gt_pose), scene, camera, lblock_model, p) >= 0.99

    def test_displaced_hypothesis_scores_low(self, lblock_model, gt_pose, camera):
        # displaced clear off the object (more than its footprint)
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        off = RigidTransform(gt_pose.rotation, gt_pose.translation + [200.0, 0, 0])
        assert rescore(hyp(off), scene, camera, lblock_model, p) <= 0.1

    def test_no_scene_evidence_scores_zero(self, lblock_model, gt_pose, camera):
        empty = DepthImage(np.zeros((camera.height, camera.width)))
        p = VerifyParams().resolved(lblock_model.leaf)
        assert rescore(hyp(gt_pose), empty, camera, lblock_model, p) == 0.0

    def test_score_bounds_and_noise_monotonicity(self, lblock_model, gt_pose, camera):
        p = VerifyParams().resolved(lblock_model.leaf)
        clean = clean_scene(lblock_model, gt_pose, camera)
        noisy, _ = generate_scene(
            SceneSpec(model_id="m", pose=gt_pose, camera=camera, noise_sigma=3.0),
            lblock_model)
        s_clean = rescore(hyp(gt_pose), clean, camera, lblock_model, p)
        s_noisy = rescore(hyp(gt_pose), noisy, camera, lblock_model, p)
        assert 0.0 <= s_noisy <= s_clean <= 1.0


class TestProjectiveICP:
    def perturbed(self, pose, rng, angle_deg, trans):
        axis = rng.normal(size=3)
        dr = axis_angle_rotation(axis, math.radians(angle_deg))
        dt = rng.normal(size=3)
        dt *= trans / np.linalg.norm(dt)
        return RigidTransform(dr @ pose.rotation, pose.translation + dt)

    def test_fixed_point_at_ground_truth(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        out = projective_icp(hyp(gt_pose), scene, camera, lblock_model, p)
        assert rotation_distance(out.pose.rotation, gt_pose.rotation) < math.radians(0.05)
        assert np.linalg.norm(out.pose.translation - gt_pose.translation) < 0.05
        assert out.status == HypothesisStatus.REFINED

    def test_convergence_from_perturbations(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        diam = lblock_model.cloud.diameter
        rng = np.random.default_rng(0)
        for _ in range(20):
            start = self.perturbed(gt_pose, rng, 5.0, 0.02 * diam)
            out = projective_icp(hyp(start), scene, camera, lblock_model, p)
            rot_err = rotation_distance(out.pose.rotation, gt_pose.rotation)
            trans_err = np.linalg.norm(out.pose.translation - gt_pose.translation)
            rot_err0 = rotation_distance(start.rotation, gt_pose.rotation)
            trans_err0 = np.linalg.norm(start.translation - gt_pose.translation)
            assert rot_err < min(math.radians(1.0), rot_err0 + 1e-12)
            assert trans_err < min(0.01 * diam, trans_err0 + 1e-12)

    def test_off_object_flags_low_support(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        far = RigidTransform(gt_pose.rotation, gt_pose.translation + [2000.0, 0, 0])
        out = projective_icp(hyp(far), scene, camera, lblock_model, p)
        assert out.low_support
        np.testing.assert_allclose(out.pose.translation, far.translation)


class TestConsistencyFilter:
    def test_exact_pose_kept(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        assert consistency_filter(hyp(gt_pose), scene, camera, lblock_model, p)

    def test_floating_in_front_of_wall_rejected(self, lblock_model, gt_pose, camera):
        # scene is only a wall; hypothesis floats 100 mm in front of it
        wall = make_plane_mesh(2000, 2000)
        shift = RigidTransform(np.eye(3), [0, 0, 900.0])
        buf = render_mesh_depth(shift.apply(wall.vertices), wall.faces, camera)
        buf[~np.isfinite(buf)] = 0.0
        scene = DepthImage(buf)
        p = VerifyParams().resolved(lblock_model.leaf)
        floating = RigidTransform(gt_pose.rotation, [0, 0, 750.0])
        assert not consistency_filter(hyp(floating), scene, camera, lblock_model, p)

    def test_occlusion_is_consistent(self, lblock_model, gt_pose, camera):
        occluder = Distractor(kind="box", size=(90.0, 90.0, 40.0),
                              pose=RigidTransform(np.eye(3), [-40.0, 0, 450.0]))
        spec = SceneSpec(model_id="m", pose=gt_pose, camera=camera,
                         distractors=(occluder,))
        scene, _ = generate_scene(spec, lblock_model)
        p = VerifyParams().resolved(lblock_model.leaf)
        assert consistency_filter(hyp(gt_pose), scene, camera, lblock_model, p)

    def test_empty_mask_rejected(self, lblock_model, camera):
        scene = DepthImage(np.zeros((camera.height, camera.width)))
        p = VerifyParams().resolved(lblock_model.leaf)
        behind = RigidTransform(np.eye(3), [0, 0, -500.0])
        assert not consistency_filter(hyp(behind), scene, camera, lblock_model, p)


class TestEdgeOverlapFilter:
    def test_object_on_table_kept(self, lblock_model, gt_pose, camera):
        table_top = Distractor(kind="box", size=(900.0, 900.0, 20.0),
                               pose=RigidTransform(np.eye(3), [0, 120.0, 760.0]))
        spec = SceneSpec(model_id="m", pose=gt_pose, camera=camera,
                         distractors=(table_top,))
        scene, _ = generate_scene(spec, lblock_model)
        p = VerifyParams().resolved(lblock_model.leaf)
        assert edge_overlap_filter(hyp(gt_pose), scene, camera, lblock_model, p)

    def test_plane_inside_wall_rejected(self, camera):
        # flat plate model hypothesized flush in the middle of a larger wall
        plate = make_plane_mesh(150, 150)
        plate_model = ObjectModel(cloud=None, leaf=5.0, mesh=plate)
        wall = make_plane_mesh(2000, 2000)
        shift = RigidTransform(np.eye(3), [0, 0, 800.0])
        buf = render_mesh_depth(shift.apply(wall.vertices), wall.faces, camera)
        buf[~np.isfinite(buf)] = 0.0
        scene = DepthImage(buf)
        p = VerifyParams().resolved(5.0)
        flush = RigidTransform(np.eye(3), [0, 0, 800.0])
        assert rescore(hyp(flush), scene, camera, plate_model, p) > 0.9
        assert not edge_overlap_filter(hyp(flush), scene, camera, plate_model, p)

    def test_empty_silhouette_rejected(self, lblock_model, camera):
        scene = DepthImage(np.zeros((camera.height, camera.width)))
        p = VerifyParams().resolved(lblock_model.leaf)
        behind = RigidTransform(np.eye(3), [0, 0, -500.0])
        assert not edge_overlap_filter(hyp(behind), scene, camera, lblock_model, p)

    def test_silhouette_operator(self):
        mask = np.zeros((6, 6), dtype=bool)
        mask[2:5, 2:5] = True
        sil = silhouette_of(mask)
        assert sil.sum() == 8  # 3x3 block: all but the center pixel
        assert not sil[3, 3]

    def test_edge_map_flags_jumps_and_missing(self):
        z = np.full((10, 10), 500.0)
        z[:, 6:] = 800.0
        z[0, 0] = 0.0
        p = VerifyParams(edge_dilation=1)
        edges = scene_edge_map(DepthImage(z), p)
        assert edges[5, 5] and edges[5, 6]   # depth jump
        assert edges[0, 1] and edges[1, 0]   # missing-data boundary


class TestVerifyPipeline:
    def test_perfect_hypothesis_accepted(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        best = verify_pipeline([hyp(gt_pose)], scene, camera, lblock_model, p)
        assert best is not None
        assert best.status == HypothesisStatus.ACCEPTED
        assert best.score >= 0.99

    def test_all_rejected_returns_none(self, lblock_model, gt_pose, camera):
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        far = RigidTransform(np.eye(3), [500.0, 500.0, 2500.0])
        assert verify_pipeline([hyp(far)], scene, camera, lblock_model, p) is None

    def test_decoy_on_wall_loses_to_true_pose(self, lblock_model, gt_pose, camera):
        # scene: object in front of a wall; decoy pose lies flat inside the wall
        wall = Distractor(kind="box", size=(2000.0, 2000.0, 50.0),
                          pose=RigidTransform(np.eye(3), [0, 0, 1000.0]))
        spec = SceneSpec(model_id="m", pose=gt_pose, camera=camera,
                         distractors=(wall,))
        scene, _ = generate_scene(spec, lblock_model)
        p = VerifyParams().resolved(lblock_model.leaf)
        # decoy: the flat face of the block pressed into the wall plane
        decoy = RigidTransform(np.eye(3), [200.0, 0.0, 975.0 + 20.0])
        best = verify_pipeline([hyp(decoy, votes=100), hyp(gt_pose, votes=10)],
                               scene, camera, lblock_model, p)
        assert best is not None
        assert rotation_distance(best.pose.rotation, gt_pose.rotation) < math.radians(2)
        assert np.linalg.norm(best.pose.translation - gt_pose.translation) < 5.0

    def test_empty_input(self, lblock_model, camera):
        scene = DepthImage(np.zeros((camera.height, camera.width)))
        p = VerifyParams().resolved(lblock_model.leaf)
        assert verify_pipeline([], scene, camera, lblock_model, p) is None

    def test_filters_are_order_independent_predicates(self, lblock_model, gt_pose, camera):
        # pure predicates: verdicts do not depend on evaluation order
        scene = clean_scene(lblock_model, gt_pose, camera)
        p = VerifyParams().resolved(lblock_model.leaf)
        for pose in (gt_pose, RigidTransform(np.eye(3), [400.0, 0, 900.0])):
            h = hyp(pose)
            c1 = consistency_filter(h, scene, camera, lblock_model, p)
            e1 = edge_overlap_filter(h, scene, camera, lblock_model, p)
            e2 = edge_overlap_filter(h, scene, camera, lblock_model, p)
            c2 = consistency_filter(h, scene, camera, lblock_model, p)
            assert (c1, e1) == (c2, e2)

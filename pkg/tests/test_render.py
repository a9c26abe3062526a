import numpy as np
import pytest

from ppfpose.camera import (
    CameraIntrinsics,
    DepthImage,
    back_project,
    back_project_pixels,
    normal_map_from_depth,
    pixel_of,
    project,
)
from ppfpose.fixtures import make_box_mesh, make_lblock_mesh, make_plane_mesh
from ppfpose.geometry import RigidTransform, axis_angle_rotation
from ppfpose.render import (
    ObjectModel,
    composite_depth,
    render_depth,
    render_mesh_depth,
    render_points_depth,
)

CAM = CameraIntrinsics(fx=500.0, fy=500.0, cx=320.0, cy=320.0, width=640, height=640)


class TestProjection:
    def test_on_axis_vertex(self):
        buf = render_points_depth(np.array([[0.0, 0.0, 1000.0]]), CAM, splat_mm=0.0)
        assert buf[320, 320] == pytest.approx(1000.0)
        buf[320, 320] = np.inf
        assert not np.isfinite(buf).any()

    def test_behind_camera_not_rendered(self):
        buf = render_points_depth(np.array([[0.0, 0.0, -100.0]]), CAM, splat_mm=5.0)
        assert not np.isfinite(buf).any()

    def test_pixel_rounding(self):
        c, r = pixel_of(np.array([320.4]), np.array([319.6]))
        assert (c[0], r[0]) == (320, 320)

    def test_intrinsics_validation(self):
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=-1, fy=500, cx=320, cy=240, width=640, height=480)
        with pytest.raises(ValueError):
            CameraIntrinsics(fx=500, fy=500, cx=900, cy=240, width=640, height=480)


class TestMeshRender:
    def test_frontoparallel_face_depth(self):
        # box front face lands at z = 1000 - 25; every mask pixel within 0.5mm
        mesh = make_box_mesh(100, 100, 50, center=(0, 0, 1000))
        buf = render_mesh_depth(mesh.vertices, mesh.faces, CAM)
        mask = np.isfinite(buf)
        assert mask.sum() > 1000
        np.testing.assert_allclose(buf[mask], 975.0, atol=0.5)

    def test_slanted_plane_depth_analytic(self):
        # plane tilted 40 degrees about x: depth from ray-plane intersection
        mesh = make_plane_mesh(200, 200)
        tilt = RigidTransform(axis_angle_rotation([1, 0, 0], np.radians(40)), [0, 0, 800])
        buf = render_mesh_depth(tilt.apply(mesh.vertices), mesh.faces, CAM)
        normal = tilt.rotation @ np.array([0, 0, 1.0])
        d = normal @ tilt.translation
        ys, xs = np.nonzero(np.isfinite(buf))
        rays = np.column_stack([(xs - CAM.cx) / CAM.fx, (ys - CAM.cy) / CAM.fy, np.ones(len(xs))])
        expect = d / (rays @ normal)
        np.testing.assert_allclose(buf[ys, xs], expect, atol=0.05)

    def test_zbuffer_nearest_wins(self):
        near = make_plane_mesh(50, 50, center=(0, 0, 0))
        t_near = RigidTransform(np.eye(3), [0, 0, 500])
        far = make_plane_mesh(400, 400, center=(0, 0, 0))
        t_far = RigidTransform(np.eye(3), [0, 0, 900])
        buf = render_mesh_depth(
            np.vstack([t_near.apply(near.vertices), t_far.apply(far.vertices)]),
            np.vstack([near.faces, far.faces + 4]), CAM)
        assert buf[320, 320] == pytest.approx(500.0, abs=0.5)
        # 80 px off-center: inside the far plane's footprint, outside the near one
        assert buf[240, 240] == pytest.approx(900.0, abs=0.5)

    def test_fully_behind_camera_empty(self):
        mesh = make_box_mesh(100, 100, 100, center=(0, 0, -500))
        img = render_depth(ObjectModel(cloud=None, leaf=1.0, mesh=mesh),
                           RigidTransform.identity(), CAM)
        assert not img.valid_mask().any()


class TestSplatRender:
    def test_splat_radius_scales_with_depth(self):
        pts = np.array([[0.0, 0.0, 500.0]])
        buf = render_points_depth(pts, CAM, splat_mm=5.0)
        # radius ceil(500*5/500) = 5 px
        assert np.isfinite(buf[320, 320 + 5])
        assert not np.isfinite(buf[320, 320 + 6])

    def test_splat_zbuffer(self):
        pts = np.array([[0.0, 0.0, 500.0], [0.0, 0.0, 400.0]])
        buf = render_points_depth(pts, CAM, splat_mm=2.0)
        assert buf[320, 320] == pytest.approx(400.0)


class TestBackProjection:
    def test_roundtrip_identity_on_measured_pixels(self):
        mesh = make_lblock_mesh()
        pose = RigidTransform(axis_angle_rotation([1, 1, 0], 0.6), [10, -20, 700])
        img = render_depth(ObjectModel(cloud=None, leaf=1.0, mesh=mesh.transformed(pose)),
                           RigidTransform.identity(), CAM)
        pts = back_project(img, CAM)
        ys, xs = np.nonzero(img.valid_mask())
        u, v, z = project(pts[ys, xs], CAM)
        cols, rows = pixel_of(u, v)
        assert np.abs(z - img.data[ys, xs]).max() < 0.1
        assert (cols == xs).all() and (rows == ys).all()

    def test_back_project_pixels_matches_grid(self):
        depth = DepthImage(np.full((10, 10), 100.0))
        cam = CameraIntrinsics(fx=50, fy=50, cx=5, cy=5, width=10, height=10)
        grid = back_project(depth, cam)
        single = back_project_pixels([3], [7], [100.0], cam)
        np.testing.assert_allclose(grid[7, 3], single[0])


class TestNormalMap:
    def test_plane_normals(self):
        mesh = make_plane_mesh(400, 400)
        tilt = RigidTransform(axis_angle_rotation([1, 0, 0], 0.5), [0, 0, 800])
        buf = render_mesh_depth(tilt.apply(mesh.vertices), mesh.faces, CAM)
        buf[~np.isfinite(buf)] = 0.0
        normals, ok = normal_map_from_depth(DepthImage(buf), CAM)
        expect = tilt.rotation @ np.array([0, 0, 1.0])
        if expect[2] > 0:  # camera looks +z, normal should face the camera
            expect = -expect
        dots = normals[ok] @ expect
        assert np.degrees(np.arccos(np.clip(dots, -1, 1))).max() < 2.0

    def test_jump_pixels_invalid(self):
        data = np.full((20, 20), 500.0)
        data[:, 10:] = 900.0
        _, ok = normal_map_from_depth(DepthImage(data), CAM, jump=50.0)
        assert not ok[10, 9] and not ok[10, 10]
        assert ok[10, 4]


class TestComposite:
    def test_nearest_wins_and_zeros_ignored(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        a[1, 1], b[1, 1] = 500.0, 300.0
        a[2, 2] = 700.0
        out = composite_depth([a, b])
        assert out.data[1, 1] == 300.0
        assert out.data[2, 2] == 700.0
        assert out.data[0, 0] == 0.0


class TestDepthImage:
    def test_negative_depth_rejected(self):
        with pytest.raises(ValueError):
            DepthImage(np.full((2, 2), -1.0))

    def test_valid_mask(self):
        d = DepthImage(np.array([[0.0, 5.0], [3.0, 0.0]]))
        np.testing.assert_array_equal(d.valid_mask(), [[False, True], [True, False]])

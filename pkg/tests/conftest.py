import numpy as np
import pytest

from ppfpose.camera import CameraIntrinsics
from ppfpose.fixtures import make_lblock_mesh, sample_mesh_cloud
from ppfpose.geometry import RigidTransform, axis_angle_rotation
from ppfpose.ppf import QuantizationParams, build_model_table
from ppfpose.preprocess import SubsampleParams
from ppfpose.render import ObjectModel

CAM = CameraIntrinsics(fx=550.0, fy=550.0, cx=319.5, cy=239.5, width=640, height=480)


@pytest.fixture(scope="session")
def camera():
    return CAM


@pytest.fixture(scope="session")
def lblock_mesh():
    return make_lblock_mesh()


@pytest.fixture(scope="session")
def lblock_table(lblock_mesh):
    cloud = sample_mesh_cloud(lblock_mesh, 6000, seed=0)
    leaf = 0.05 * lblock_mesh.diameter
    return build_model_table(cloud, SubsampleParams(leaf=leaf), QuantizationParams())


@pytest.fixture(scope="session")
def lblock_model(lblock_table, lblock_mesh):
    return ObjectModel(cloud=lblock_table.model, leaf=lblock_table.leaf,
                       mesh=lblock_mesh)


def pose_at(z=700.0, axis=(1, 0.6, 0.2), angle=0.7, xy=(0.0, 0.0)):
    return RigidTransform(axis_angle_rotation(np.asarray(axis, dtype=float), angle),
                          [xy[0], xy[1], z])


@pytest.fixture(scope="session")
def gt_pose():
    return pose_at()

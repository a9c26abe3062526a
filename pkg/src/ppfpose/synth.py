"""Synthetic depth scenes with known ground truth for desk-scale verification."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .camera import CameraIntrinsics, DepthImage
from .geometry import RigidTransform, TriMesh
from .fixtures import make_box_mesh, make_icosphere_mesh
from .render import ObjectModel, composite_depth, render_mesh_depth, render_points_depth


@dataclass(frozen=True)
class Distractor:
    kind: str                 # "box" or "sphere"
    size: tuple               # box: (sx, sy, sz); sphere: (radius,)
    pose: RigidTransform

    def mesh(self) -> TriMesh:
        if self.kind == "box":
            return make_box_mesh(*self.size).transformed(self.pose)
        if self.kind == "sphere":
            return make_icosphere_mesh(self.size[0]).transformed(self.pose)
        raise ValueError(f"unknown distractor kind {self.kind!r}")


@dataclass(frozen=True)
class SceneSpec:
    model_id: str
    pose: RigidTransform
    camera: CameraIntrinsics
    distractors: tuple = field(default_factory=tuple)
    noise_sigma: float = 0.0
    dropout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")


def _pose_from_dict(d: dict) -> RigidTransform:
    from .geometry import axis_angle_rotation

    if "rotation" in d:
        R = np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3)
    elif "axis_angle" in d:
        ax, ay, az, deg = d["axis_angle"]
        R = axis_angle_rotation([ax, ay, az], np.radians(deg))
    else:
        R = np.eye(3)
    return RigidTransform(R, d.get("translation", [0.0, 0.0, 0.0]))


def load_scene_spec(path):
    """Parse a YAML scene description.

    Returns (SceneSpec, model_path): the model path is resolved relative to
    the spec file's directory.
    """
    import os

    import yaml

    with open(path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict):
        raise ValueError(f"{path}: scene spec must be a mapping")
    for key in ("model", "pose", "camera"):
        if key not in doc:
            raise ValueError(f"{path}: missing required key {key!r}")
    cam = CameraIntrinsics(**{k: doc["camera"][k]
                              for k in ("fx", "fy", "cx", "cy", "width", "height")})
    distractors = []
    for d in doc.get("distractors", []):
        size = d.get("size")
        if size is None:
            raise ValueError(f"{path}: distractor lacks a size")
        distractors.append(Distractor(kind=d.get("kind", "box"),
                                      size=tuple(np.atleast_1d(size).tolist()),
                                      pose=_pose_from_dict(d)))
    spec = SceneSpec(
        model_id=doc.get("model_id", os.path.splitext(os.path.basename(doc["model"]))[0]),
        pose=_pose_from_dict(doc["pose"]),
        camera=cam,
        distractors=tuple(distractors),
        noise_sigma=float(doc.get("noise_sigma", 0.0)),
        dropout=float(doc.get("dropout", 0.0)),
        seed=int(doc.get("seed", 0)),
    )
    model_path = doc["model"]
    if not os.path.isabs(model_path):
        model_path = os.path.join(os.path.dirname(os.path.abspath(path)), model_path)
    return spec, model_path


def generate_scene(spec: SceneSpec, model: ObjectModel, seed=None):
    """Render the model plus distractors, then add noise and dropout.

    Deterministic for a given seed. Raises when the object is entirely
    outside the camera frustum.
    """
    cam = spec.camera
    if model.mesh is not None:
        buf = render_mesh_depth(spec.pose.apply(model.mesh.vertices),
                                model.mesh.faces, cam)
    else:
        buf = render_points_depth(spec.pose.apply(model.cloud.points), cam, model.leaf)
    buf[~np.isfinite(buf)] = 0.0
    if not (buf > 0).any():
        raise ValueError("object is fully outside the camera frustum")

    layers = [buf]
    for d in spec.distractors:
        m = d.mesh()
        db = render_mesh_depth(m.vertices, m.faces, cam)
        db[~np.isfinite(db)] = 0.0
        layers.append(db)
    depth = composite_depth(layers).data

    rng = np.random.default_rng(spec.seed if seed is None else seed)
    measured = depth > 0
    if spec.noise_sigma > 0:
        noise = rng.normal(0.0, spec.noise_sigma, depth.shape)
        depth = np.where(measured, np.maximum(depth + noise, 1.0), 0.0)
    if spec.dropout > 0:
        drop = rng.random(depth.shape) < spec.dropout
        depth = np.where(drop & measured, 0.0, depth)
    return DepthImage(depth), spec.pose

"""Visible surface discrepancy error, correctness decisions, and recall."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import CameraIntrinsics, DepthImage
from .geometry import RigidTransform
from .render import ObjectModel, render_depth


@dataclass(frozen=True)
class VSDParams:
    delta: float = 15.0   # visibility tolerance, mm
    tau: float = 20.0     # depth mismatch tolerance, mm
    t: float = 0.35       # correctness threshold on the error

    def __post_init__(self):
        if self.delta <= 0 or self.tau <= 0:
            raise ValueError("delta and tau must be positive")
        if not 0 < self.t < 1:
            raise ValueError("t must be in (0, 1)")


def visibility_mask(rendered, scene, delta):
    """Rendered pixels that are plausibly visible: the scene has a measurement
    and the render is not behind it by more than `delta`."""
    return (rendered > 0) & (scene > 0) & (rendered <= scene + delta)


def vsd_error(pose_est: RigidTransform, pose_gt: RigidTransform,
              model: ObjectModel, scene_depth: DepthImage,
              cam: CameraIntrinsics, p: VSDParams) -> float:
    """Fraction of mismatched pixels over the union of visibility masks.

    A union pixel counts as an error when it is outside the intersection of
    the two masks or the two rendered depths differ by at least `tau`.
    Returns 1 when the union is empty. Symmetric in (est, gt).
    """
    d_est = render_depth(model, pose_est, cam).data
    d_gt = render_depth(model, pose_gt, cam).data
    scene = scene_depth.data
    v_est = visibility_mask(d_est, scene, p.delta)
    v_gt = visibility_mask(d_gt, scene, p.delta)
    union = v_est | v_gt
    n_union = int(union.sum())
    if n_union == 0:
        return 1.0
    inter = v_est & v_gt
    mismatch = np.zeros_like(union)
    mismatch[inter] = np.abs(d_gt[inter] - d_est[inter]) >= p.tau
    errors = int((union & ~inter).sum()) + int(mismatch.sum())
    return errors / n_union


def is_correct(e: float, p: VSDParams) -> bool:
    """Strictly below the threshold counts as correct."""
    if not 0 <= e <= 1:
        raise ValueError("error must be in [0, 1]")
    return e < p.t


def recall(errors, p: VSDParams) -> float:
    """Fraction of targets with a correct pose.

    One entry per annotated ground-truth target; None marks a target for
    which no pose was emitted and counts as incorrect.
    """
    errors = list(errors)
    if not errors:
        raise ValueError("recall of an empty result set is undefined")
    hits = sum(1 for e in errors if e is not None and is_correct(e, p))
    return hits / len(errors)

"""Aggregated pipeline configuration with JSON round-tripping.

Angles are radians and lengths millimeters throughout, matching the
dataclasses they mirror. The subsampling leaf is given as a fraction of the
model diameter and resolved to absolute millimeters at training time.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .evaluation import VSDParams
from .matching import MatchParams
from .ppf import QuantizationParams
from .preprocess import SubsampleParams
from .verification import VerifyParams

DEFAULT_LEAF_FRAC = 0.05


@dataclass(frozen=True)
class PipelineConfig:
    leaf_frac: float = DEFAULT_LEAF_FRAC
    normal_cluster_angle: float = math.pi / 6
    merge_neighbor_clusters: bool = True
    quant: QuantizationParams = field(default_factory=QuantizationParams)
    match: MatchParams = field(default_factory=MatchParams)
    verify: VerifyParams = field(default_factory=VerifyParams)
    vsd: VSDParams = field(default_factory=VSDParams)
    depth_scale: float = 0.1     # mm per stored count in 16-bit depth files
    normal_k: int = 20           # kNN size for scene/model normal estimation
    model_samples: int = 20000   # surface samples drawn from mesh models
    seed: int = 0

    def __post_init__(self):
        if self.leaf_frac <= 0 or self.depth_scale <= 0:
            raise ValueError("leaf_frac and depth_scale must be positive")

    def subsample_params(self, leaf_mm: float) -> SubsampleParams:
        return SubsampleParams(leaf=leaf_mm,
                               normal_cluster_angle=self.normal_cluster_angle,
                               merge_neighbor_clusters=self.merge_neighbor_clusters)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        return out

    @staticmethod
    def from_dict(d: dict) -> "PipelineConfig":
        """Build from a plain dict; unknown keys (e.g. the informational
        fields of a resolved metadata block) are ignored."""
        known = {f.name for f in dataclasses.fields(PipelineConfig)}
        d = {k: v for k, v in d.items() if k in known}
        for key, cls in (("quant", QuantizationParams), ("match", MatchParams),
                         ("verify", VerifyParams), ("vsd", VSDParams)):
            if key in d and isinstance(d[key], dict):
                d[key] = cls(**d[key])
        return PipelineConfig(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "PipelineConfig":
        return PipelineConfig.from_dict(json.loads(text))


def resolved_config_dict(cfg: PipelineConfig, leaf_mm: float,
                         model_diameter: float) -> dict:
    """Fully resolved parameter block written into run metadata: every
    derived default (leaf, thresholds) is materialized for reproducibility."""
    out = cfg.to_dict()
    out["leaf_mm"] = leaf_mm
    out["model_diameter"] = model_diameter
    out["match"] = dataclasses.asdict(cfg.match.resolved(model_diameter))
    out["verify"] = dataclasses.asdict(cfg.verify.resolved(leaf_mm))
    return out

"""Pointwise fusion of the flow and appearance score maps."""

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, UnnormalizedInput, ValidationError
from .tcp import KIND_FUSED, ScoreMapSequence

_TOL = 1e-9


@dataclass(frozen=True)
class FusionWeights:
    """Importance factors: alpha weights the flow map, beta the appearance map."""

    alpha: float = 0.5
    beta: float = 0.5

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValidationError("fusion weights must be non-negative")
        if self.alpha + self.beta <= 0:
            raise ValidationError("at least one fusion weight must be positive")


def fuse_maps(
    flow_map: ScoreMapSequence,
    appearance_map: ScoreMapSequence,
    weights: FusionWeights = FusionWeights(),
) -> ScoreMapSequence:
    """Weighted sum alpha * flow + beta * appearance, pointwise.

    Both inputs must already be normalized to [0, 1] and share dims (the
    pipeline fuses at full frame resolution, after upsampling). Output values
    lie in [0, alpha + beta].
    """
    if flow_map.values.shape != appearance_map.values.shape:
        raise DimensionMismatch(
            f"flow map {flow_map.values.shape} and appearance map "
            f"{appearance_map.values.shape} differ"
        )
    for name, m in (("flow", flow_map), ("appearance", appearance_map)):
        if m.values.size and (m.values.min() < -_TOL or m.values.max() > 1.0 + _TOL):
            raise UnnormalizedInput(f"{name} map values fall outside [0, 1]")
    fused = weights.alpha * flow_map.values + weights.beta * appearance_map.values
    return ScoreMapSequence(values=fused, grid=flow_map.grid, kind=KIND_FUSED)

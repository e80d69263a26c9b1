"""Feature-metric cost maps: residuals between warped and reference features.

For one context view the per-pixel cost is the L2 norm over channels of the
difference between the context features sampled at the warped location and
the reference features.  Invalid pixels (behind camera, outside frame) carry
value 0 and gradient 0 but stay visible through the mask so downstream code
can tell "cheap" from "unknown".

The norm is realized as sqrt(s + eps) - sqrt(eps): exactly zero when the
squared residual s is zero, epsilon-stabilized in gradient, and within
5e-7 of sqrt(s) once s dwarfs eps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .geometry import Intrinsics, Pose, warp_coords
from .tensor import Tensor

COST_EPS = 1e-12


@dataclass
class CostMap:
    """Per-pixel non-negative residuals plus the validity mask (no grad)."""

    values: Tensor          # (1, H, W), >= 0, zero where invalid
    valid: np.ndarray       # (1, H, W) float, 1 where the warp landed in-frame

    @property
    def shape(self) -> tuple:
        return self.values.shape

    def mean_value(self) -> float:
        """Mean cost over valid pixels (0 if nothing is valid)."""
        count = float(self.valid.sum())
        if count == 0:
            return 0.0
        return float(self.values.data.sum() / count)


def build_cost(f_ref: Tensor, f_ctx: Tensor, depth, pose, intr: Intrinsics) -> CostMap:
    """Cost of explaining view `f_ctx` with `depth` and `pose` against `f_ref`.

    depth: Tensor or ndarray (1,H,W) at feature resolution; pose: Pose or a
    6-vector twist Tensor.  Differentiable w.r.t. depth, twist, and both
    feature maps.
    """
    if f_ref.shape != f_ctx.shape:
        raise DimensionError(
            f"feature shapes differ: {f_ref.shape} vs {f_ctx.shape}")
    if f_ref.ndim != 3:
        raise DimensionError(f"features must be (C,H,W), got {f_ref.shape}")
    c, h, w = f_ref.shape
    if (h, w) != (intr.height, intr.width):
        raise DimensionError(
            f"features {h}x{w} do not match intrinsics {intr.height}x{intr.width}")

    coords, warp_valid = warp_coords(depth, pose, intr)
    sampled, sample_valid = T.bilinear_sample(f_ctx, coords)
    valid = warp_valid * sample_valid

    diff = sampled - f_ref
    sq = (diff * diff).sum(axis=0, keepdims=True)
    values = T.sqrt(sq + COST_EPS) - float(np.sqrt(COST_EPS))
    values = values * T.constant(valid)  # zero value and zero gradient outside
    return CostMap(values=values, valid=valid)


def average_cost(costs: list[CostMap]) -> CostMap:
    """Mean cost over views, counting each pixel only where it was valid.

    A pixel's average divides by the number of views that actually saw it;
    pixels seen by no view are 0 with valid=0.
    """
    if not costs:
        raise ConfigError("average_cost needs at least one cost map")
    shape = costs[0].shape
    for cm in costs[1:]:
        if cm.shape != shape:
            raise DimensionError(f"cost shapes differ: {cm.shape} vs {shape}")
    if len(costs) == 1:
        return costs[0]
    count = np.zeros_like(costs[0].valid)
    for cm in costs:
        count += cm.valid
    total = costs[0].values
    for cm in costs[1:]:
        total = total + cm.values
    values = total * T.constant(1.0 / np.maximum(count, 1.0))
    valid = (count > 0).astype(costs[0].valid.dtype)
    return CostMap(values=values, valid=valid)

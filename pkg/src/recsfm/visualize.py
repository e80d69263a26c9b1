"""Depth-map coloring with one fixed, documented color ramp.

The ramp runs dark violet -> magenta -> orange -> bright yellow (a
perceptually ordered heat ramp).  NEAR surfaces render bright and FAR
surfaces dark: pixels are normalized by fixed bounds [vmin, vmax] and the
normalized value is inverted before the lookup.  Because both the anchor
colors and the normalization bounds are fixed inputs, images from
different runs over the same depth range are directly comparable.
Invalid pixels (nonpositive or nonfinite depth) render black.
"""

from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ConfigError, DimensionError

# Anchor colors at equally spaced stops t = 0, 1/6, ..., 1.  Values are
# sRGB bytes; lookups interpolate linearly between neighboring anchors.
RAMP = np.array([
    [13, 8, 65],      # t=0.00 dark violet  (far)
    [84, 15, 109],    # t=0.17
    [139, 41, 120],   # t=0.33 magenta
    [185, 71, 105],   # t=0.50
    [226, 110, 70],   # t=0.67 orange
    [249, 166, 33],   # t=0.83
    [252, 230, 90],   # t=1.00 bright yellow (near)
], dtype=np.float64)


def colorize_depth(depth: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Map a depth image to (H,W,3) uint8 colors using the fixed ramp."""
    if vmax <= vmin:
        raise ConfigError(f"need vmin < vmax, got [{vmin}, {vmax}]")
    d = np.asarray(depth, dtype=np.float64)
    if d.ndim == 3:
        if d.shape[0] != 1:
            raise DimensionError(f"depth must be (H,W) or (1,H,W), got {d.shape}")
        d = d[0]
    elif d.ndim != 2:
        raise DimensionError(f"depth must be (H,W) or (1,H,W), got {d.shape}")
    invalid = ~np.isfinite(d) | (d <= 0)
    d = np.where(invalid, vmin, d)  # placeholder; painted black below
    t = np.clip((d - vmin) / (vmax - vmin), 0.0, 1.0)
    t = 1.0 - t  # near = bright end of the ramp
    pos = t * (len(RAMP) - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, len(RAMP) - 1)
    frac = (pos - lo)[..., None]
    rgb = RAMP[lo] * (1.0 - frac) + RAMP[hi] * frac
    rgb[invalid] = 0.0
    return np.clip(np.round(rgb), 0, 255).astype(np.uint8)


def save_depth_color(path: str, depth: np.ndarray, vmin: float, vmax: float) -> None:
    Image.fromarray(colorize_depth(depth, vmin, vmax), mode="RGB").save(path)

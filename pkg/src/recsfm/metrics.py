"""Depth and pose evaluation metrics.

Everything here is plain numpy on detached arrays: metrics are for
reporting, not for backpropagation.  Depth metrics are computed over a
validity mask (ground-truth pixels > 0, optionally intersected with a
caller mask); pose metrics compare rotation matrices and translation
vectors directly.

``si_inv`` and ``sc_inv`` are two names for the same quantity — the
scale-invariant log RMSE ``sqrt(mean(e^2) - mean(e)^2)`` with
``e = log(pred) - log(gt)`` — kept as aliases because downstream
tables historically use either spelling.
"""

from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import DimensionError, DomainError
from .geometry import Pose

# Canonical column order for reports.
DEPTH_METRIC_ORDER = (
    "abs_rel",
    "sq_rel",
    "rmse",
    "rmse_log",
    "delta1",
    "delta2",
    "delta3",
    "si_inv",
    "sc_inv",
    "l1_inv",
    "l1_rel",
)

POSE_METRIC_ORDER = ("rot_deg", "tr_deg", "tr_cm")

_DEGENERATE_TRANSLATION = 1e-9


def depth_metrics(
    pred,
    gt,
    mask: Optional[np.ndarray] = None,
    median_scale: bool = False,
) -> dict:
    """Compute standard depth-error metrics over valid pixels.

    ``pred`` and ``gt`` are arrays of identical shape (any rank; maps
    are flattened).  Valid pixels are those with ``gt > 0`` and, when
    ``mask`` is given, nonzero mask.  With ``median_scale`` the
    prediction is first multiplied by ``median(gt) / median(pred)``
    over the valid set, which removes the global scale ambiguity of
    self-supervised models.

    Returns a dict keyed by DEPTH_METRIC_ORDER.  Raises DomainError if
    no pixel is valid or predictions are not strictly positive on the
    valid set (log-based fields need positive depth).
    """
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise DimensionError(
            f"prediction shape {p.shape} does not match ground truth {g.shape}"
        )
    valid = np.isfinite(g) & (g > 0.0)
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != g.shape:
            raise DimensionError(
                f"mask shape {m.shape} does not match ground truth {g.shape}"
            )
        valid &= m.astype(bool)
    if not valid.any():
        raise DomainError("no valid pixels to evaluate")

    p = p[valid]
    g = g[valid]
    if median_scale:
        med_p = float(np.median(p))
        if med_p <= 0.0:
            raise DomainError("median of prediction is not positive; cannot scale")
        p = p * (float(np.median(g)) / med_p)
    if not np.all(p > 0.0):
        raise DomainError("depth predictions must be positive on valid pixels")

    err = p - g
    abs_err = np.abs(err)
    log_err = np.log(p) - np.log(g)
    ratio = np.maximum(p / g, g / p)
    si = float(np.sqrt(max(np.mean(log_err**2) - np.mean(log_err) ** 2, 0.0)))

    return {
        "abs_rel": float(np.mean(abs_err / g)),
        "sq_rel": float(np.mean(err**2 / g)),
        "rmse": float(np.sqrt(np.mean(err**2))),
        "rmse_log": float(np.sqrt(np.mean(log_err**2))),
        "delta1": float(np.mean(ratio < 1.25)),
        "delta2": float(np.mean(ratio < 1.25**2)),
        "delta3": float(np.mean(ratio < 1.25**3)),
        "si_inv": si,
        "sc_inv": si,
        "l1_inv": float(np.mean(np.abs(1.0 / p - 1.0 / g))),
        "l1_rel": float(np.mean(abs_err / g)),
    }


def rotation_angle_deg(r_pred: np.ndarray, r_gt: np.ndarray) -> float:
    """Geodesic angle in degrees between two rotation matrices."""
    ra = np.asarray(r_pred, dtype=np.float64)
    rb = np.asarray(r_gt, dtype=np.float64)
    if ra.shape != (3, 3) or rb.shape != (3, 3):
        raise DimensionError("rotation matrices must be 3x3")
    cos = (np.trace(ra @ rb.T) - 1.0) * 0.5
    return float(np.degrees(np.arccos(np.clip(cos, -1.0, 1.0))))


def translation_angle_deg(t_pred: np.ndarray, t_gt: np.ndarray) -> float:
    """Angle in degrees between two translation directions.

    Returns 0 when either vector is shorter than 1e-9: a near-zero
    translation has no meaningful direction, and penalizing it with an
    arbitrary angle would make near-stationary views dominate.
    """
    ta = np.asarray(t_pred, dtype=np.float64).reshape(3)
    tb = np.asarray(t_gt, dtype=np.float64).reshape(3)
    na = float(np.linalg.norm(ta))
    nb = float(np.linalg.norm(tb))
    if na < _DEGENERATE_TRANSLATION or nb < _DEGENERATE_TRANSLATION:
        return 0.0
    # atan2 of (cross magnitude, dot) is exact at 0 and 180 degrees and
    # well conditioned near both, unlike arccos of a normalized dot.
    cross = float(np.linalg.norm(np.cross(ta, tb)))
    return float(np.degrees(np.arctan2(cross, float(np.dot(ta, tb)))))


def pose_metrics(pred: Pose, gt: Pose) -> dict:
    """Rotation angle (deg), translation direction angle (deg), and
    translation magnitude error (cm) between two poses."""
    return {
        "rot_deg": rotation_angle_deg(pred.rotation, gt.rotation),
        "tr_deg": translation_angle_deg(pred.translation, gt.translation),
        "tr_cm": float(np.linalg.norm(pred.translation - gt.translation) * 100.0),
    }


def average_metrics(rows: Sequence[Mapping[str, float]]) -> dict:
    """Field-wise arithmetic mean of metric dicts (all rows must share keys)."""
    if not rows:
        raise DomainError("cannot average zero metric rows")
    keys = list(rows[0].keys())
    for row in rows[1:]:
        if list(row.keys()) != keys:
            raise DomainError("metric rows have mismatched fields")
    return {k: float(np.mean([row[k] for row in rows])) for k in keys}


def format_table(metrics: Mapping[str, float], title: Optional[str] = None) -> str:
    """Render a metrics dict as an aligned two-column text table."""
    lines = []
    if title:
        lines.append(title)
        lines.append("-" * len(title))
    width = max(len(k) for k in metrics)
    for key, value in metrics.items():
        lines.append(f"{key:<{width}}  {value:.6f}")
    return "\n".join(lines) + "\n"


def format_delimited(metrics: Mapping[str, float]) -> str:
    """Render a metrics dict as two tab-separated lines (header, values)."""
    keys = list(metrics.keys())
    header = "\t".join(keys)
    values = "\t".join(f"{metrics[k]:.9g}" for k in keys)
    return header + "\n" + values + "\n"

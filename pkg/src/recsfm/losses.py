"""Training objectives.

Two families share a per-stage discount schedule: later refinement
stages count more, with stage s of m weighted gamma^(m-s).

Supervised:   L = L_depth + L_pose
  - L_depth: L1 between upsampled predicted depth and ground truth.
  - L_pose: pixel reprojection distance between the predicted and true
    camera under ground-truth depth.  Because both projections use the
    same depth, jointly rescaling the scene (depth and translation)
    cancels out, so the term has no preferred scale.

Self-supervised:  L = L_photo + lambda * L_smooth
  - L_photo: per-pixel min over views of alpha*(1-SSIM)/2 +
    (1-alpha)*L1 between each warped context and the reference, with a
    stationary mask that drops pixels reconstructed no better than the
    unwarped context already matches.
  - L_smooth: edge-weighted first differences of mean-normalized depth.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, DomainError
from .geometry import Intrinsics, Pose, Z_EPS, se3_exp, warp_coords
from .tensor import Tensor

GAMMA_DEFAULT = 0.85    # per-stage discount
ALPHA_DEFAULT = 0.85    # SSIM share of the photometric error
LAMBDA_DEFAULT = 0.01   # smoothness weight
SSIM_C1 = 0.01**2       # for unit-range images
SSIM_C2 = 0.03**2


def _check_gamma(gamma: float) -> None:
    if not 0.0 < gamma <= 1.0:
        raise ConfigError(f"discount must be in (0, 1], got {gamma}")


def discounted_sum(stage_terms: Sequence[Tensor], gamma: float = GAMMA_DEFAULT) -> Tensor:
    """sum_s gamma^(m-s) * term_s with s = 1..m (final stage weighted 1)."""
    _check_gamma(gamma)
    if not stage_terms:
        raise ConfigError("need at least one stage term")
    m = len(stage_terms)
    total = None
    for s, term in enumerate(stage_terms, start=1):
        piece = term * (gamma ** (m - s))
        total = piece if total is None else total + piece
    return total


def _upsample_to(pred: Tensor, hw) -> Tensor:
    """Bilinearly upsample a (1,h,w) map to (1,H,W); identity if already there."""
    h, w = hw
    if pred.shape[1:] == (h, w):
        return pred
    if h % pred.shape[1] or w % pred.shape[2]:
        raise DimensionError(
            f"prediction {pred.shape} does not upsample to {h}x{w} by an "
            f"integer factor")
    return T.bilinear_upsample(pred, w // pred.shape[2], out_hw=(h, w))


# -- supervised -------------------------------------------------------------


def depth_stage_terms(stage_preds: Sequence[Tensor], gt,
                      valid_mask: Optional[np.ndarray] = None) -> list[Tensor]:
    """Per-stage mean L1 depth errors over valid pixels (gt > 0 and mask)."""
    gt_arr = np.asarray(gt, dtype=np.float32)
    if gt_arr.ndim != 3 or gt_arr.shape[0] != 1:
        raise DimensionError(f"ground-truth depth must be (1,H,W), got {gt_arr.shape}")
    valid = gt_arr > 0.0
    if valid_mask is not None:
        if valid_mask.shape != gt_arr.shape:
            raise DimensionError("valid_mask shape does not match ground truth")
        valid &= valid_mask.astype(bool)
    count = int(valid.sum())
    if count == 0:
        raise DomainError("no valid ground-truth pixels for the depth loss")
    gt_t = T.constant(np.where(valid, gt_arr, 0.0).astype(np.float32))
    mask_t = T.constant(valid.astype(np.float32))
    terms = []
    for pred in stage_preds:
        up = _upsample_to(pred, gt_arr.shape[1:])
        err = T.absolute(up - gt_t) * mask_t
        terms.append(err.sum() / float(count))
    return terms


def loss_depth(stage_preds: Sequence[Tensor], gt, gamma: float = GAMMA_DEFAULT,
               valid_mask: Optional[np.ndarray] = None) -> Tensor:
    """Discounted L1 depth supervision across refinement stages."""
    return discounted_sum(depth_stage_terms(stage_preds, gt, valid_mask), gamma)


def _in_front_mask(depth: np.ndarray, pose: Pose, intr: Intrinsics) -> np.ndarray:
    """Boolean (1,H,W): pixels whose backprojection lands in front of `pose`."""
    _, h, w = depth.shape
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    x = (us - intr.cx) / intr.fx * depth[0]
    y = (vs - intr.cy) / intr.fy * depth[0]
    r = pose.rotation
    z = r[2, 0] * x + r[2, 1] * y + r[2, 2] * depth[0] + pose.translation[2]
    return (z > Z_EPS)[None]


def pose_stage_terms(stage_poses: Sequence, gt_depth, gt_pose: Pose,
                     intr: Intrinsics) -> list[Tensor]:
    """Per-stage mean reprojection L1 between predicted and true cameras.

    Each pixel with positive ground-truth depth is backprojected and
    reprojected under both cameras; the term is the mean |du|+|dv| over
    pixels that land in front of both.  Invalid ground-truth pixels
    (depth <= 0) are masked out, not errors.
    """
    gt_arr = np.asarray(gt_depth, dtype=np.float64)
    if gt_arr.ndim != 3 or gt_arr.shape[0] != 1:
        raise DimensionError(f"ground-truth depth must be (1,H,W), got {gt_arr.shape}")
    base_valid = gt_arr > 0.0
    safe_depth = np.where(base_valid, gt_arr, 1.0)
    with T.no_grad():
        coords_gt, _ = warp_coords(safe_depth, gt_pose, intr)
    coords_gt = T.constant(coords_gt.data)
    front_gt = _in_front_mask(safe_depth, gt_pose, intr)

    terms = []
    for pred in stage_poses:
        coords_p, _ = warp_coords(safe_depth, pred, intr)
        pred_pose = pred if isinstance(pred, Pose) else se3_exp(
            pred.data.astype(np.float64))
        mask = base_valid & front_gt & _in_front_mask(safe_depth, pred_pose, intr)
        count = int(mask.sum())
        if count == 0:
            raise DomainError("no mutually valid pixels for the pose loss")
        mask_t = T.constant(mask.astype(coords_p.data.dtype))
        err = T.absolute(coords_p - coords_gt) * mask_t
        terms.append(err.sum() / float(count))
    return terms


def loss_pose(stage_poses: Sequence, gt_depth, gt_pose: Pose, intr: Intrinsics,
              gamma: float = GAMMA_DEFAULT) -> Tensor:
    """Discounted reprojection pose supervision across refinement stages."""
    return discounted_sum(pose_stage_terms(stage_poses, gt_depth, gt_pose, intr),
                          gamma)


# -- self-supervised --------------------------------------------------------


def ssim(a: Tensor, b: Tensor, c1: float = SSIM_C1, c2: float = SSIM_C2) -> Tensor:
    """Per-pixel structural similarity with a 3x3 mean window.

    Local statistics use count normalization at the borders (each
    window averages only the pixels that exist), so edge pixels are not
    biased toward zero.  Returns a (C,H,W) map; identical inputs give
    exactly 1 everywhere.
    """
    if a.shape != b.shape or a.ndim != 3:
        raise DimensionError(f"ssim needs matching (C,H,W) inputs, got "
                             f"{a.shape} and {b.shape}")
    c, h, w = a.shape
    dt = a.data.dtype
    eye = np.eye(c, dtype=dt)[:, :, None, None] * np.ones((1, 1, 3, 3), dt)
    kernel = T.constant(eye)

    with T.no_grad():
        counts = T.conv2d(T.constant(np.ones((1, h, w), dt)),
                          T.constant(np.ones((1, 1, 3, 3), dt)), padding=1)
    inv = T.constant((1.0 / counts.data).astype(dt))

    def box_mean(x: Tensor) -> Tensor:
        return T.conv2d(x, kernel, padding=1) * inv

    mu_a = box_mean(a)
    mu_b = box_mean(b)
    var_a = box_mean(a * a) - mu_a * mu_a
    var_b = box_mean(b * b) - mu_b * mu_b
    cov = box_mean(a * b) - mu_a * mu_b
    num = (mu_a * mu_b * 2.0 + c1) * (cov * 2.0 + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return num / den


def photometric_error(a: Tensor, b: Tensor, alpha: float = ALPHA_DEFAULT) -> Tensor:
    """(H,W) per-pixel error: alpha*(1-SSIM)/2 + (1-alpha)*|a-b|, channel-meaned."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    l1 = T.absolute(a - b)
    if alpha == 0.0:
        return l1.mean(axis=0)
    pe = ((1.0 - ssim(a, b)) * (alpha / 2.0)) + l1 * (1.0 - alpha)
    return pe.mean(axis=0)


def loss_photometric(warped: Sequence[Tensor], reference: Tensor,
                     contexts: Sequence[Tensor],
                     alpha: float = ALPHA_DEFAULT) -> Tensor:
    """Min-fused photometric error with a stationary automask.

    warped[i] is context i resampled into the reference frame by the
    current depth and pose; contexts[i] is the same view unwarped.  The
    per-pixel error is the minimum over views, and a pixel only counts
    when warping explains it at least as well as not warping at all
    (which discards occlusions and static-camera pathologies).
    """
    if not warped:
        raise ConfigError("photometric loss needs at least one warped view")
    if len(warped) != len(contexts):
        raise DimensionError(
            f"{len(warped)} warped views but {len(contexts)} contexts")
    for img in list(warped) + list(contexts):
        if img.shape != reference.shape:
            raise DimensionError("all photometric inputs must share one shape")

    fused = None
    for w in warped:
        pe = photometric_error(w, reference, alpha)
        fused = pe if fused is None else T.minimum(fused, pe)

    with T.no_grad():
        unwarped = None
        for ctx in contexts:
            pe = photometric_error(ctx, reference, alpha).data
            unwarped = pe if unwarped is None else np.minimum(unwarped, pe)
    keep = fused.data <= unwarped
    count = int(keep.sum())
    if count == 0:
        raise DomainError("stationary mask rejected every pixel")
    mask = T.constant(keep.astype(fused.data.dtype))
    return (fused * mask).sum() / float(count)


def loss_smooth(depth: Tensor, image) -> Tensor:
    """Edge-weighted smoothness of mean-normalized depth.

    Forward differences of d/mean(d), each weighted by exp(-|dI|) with
    the image gradient averaged over channels; x and y terms are meaned
    over their own (H, W-1) / (H-1, W) grids and summed.
    """
    if depth.ndim != 3 or depth.shape[0] != 1:
        raise DimensionError(f"depth must be (1,H,W), got {depth.shape}")
    img = image.data if isinstance(image, Tensor) else np.asarray(image)
    if img.ndim != 3 or img.shape[1:] != depth.shape[1:]:
        raise DimensionError(
            f"image {img.shape} does not match depth {depth.shape}")

    dbar = depth / depth.mean()
    gx = T.absolute(dbar[:, :, 1:] - dbar[:, :, :-1])
    gy = T.absolute(dbar[:, 1:, :] - dbar[:, :-1, :])
    ix = np.mean(np.abs(img[:, :, 1:] - img[:, :, :-1]), axis=0, keepdims=True)
    iy = np.mean(np.abs(img[:, 1:, :] - img[:, :-1, :]), axis=0, keepdims=True)
    wx = T.constant(np.exp(-ix).astype(depth.data.dtype))
    wy = T.constant(np.exp(-iy).astype(depth.data.dtype))
    return (gx * wx).mean() + (gy * wy).mean()


# -- aggregation ------------------------------------------------------------


@dataclass
class LossReport:
    """One training step's objective: differentiable total plus a readable
    breakdown (aggregated component floats, per-stage floats, weights)."""

    total: Tensor
    components: dict
    weights: dict
    per_stage: dict = field(default_factory=dict)

    _ORDER = ("depth", "pose", "photo", "smooth")

    def to_line(self) -> str:
        fields = [("total", float(self.total.data))]
        fields += [(k, self.components[k]) for k in self._ORDER
                   if k in self.components]
        return "\t".join(f"{k}={v:.6f}" for k, v in fields)


def total_loss(mode: str, parts: dict, lam: float = LAMBDA_DEFAULT,
               gamma: float = GAMMA_DEFAULT, alpha: float = ALPHA_DEFAULT,
               per_stage: Optional[dict] = None) -> LossReport:
    """Combine component scalars into the final objective for `mode`."""
    if mode == "supervised":
        for key in ("depth", "pose"):
            if key not in parts:
                raise ConfigError(f"supervised loss needs a {key!r} component")
        total = parts["depth"] + parts["pose"]
    elif mode == "self_supervised":
        for key in ("photo", "smooth"):
            if key not in parts:
                raise ConfigError(f"self-supervised loss needs a {key!r} component")
        total = parts["photo"] + parts["smooth"] * lam
    else:
        raise ConfigError(f"unknown loss mode {mode!r}")
    components = {k: float(v.data) for k, v in parts.items()}
    weights = {"gamma": gamma, "alpha": alpha, "lambda": lam}
    return LossReport(total=total, components=components, weights=weights,
                      per_stage=per_stage or {})


def supervised_loss(result, gt_depth, gt_poses: Sequence[Pose],
                    intr: Intrinsics, gamma: float = GAMMA_DEFAULT) -> LossReport:
    """Assemble depth + pose supervision from an optimization run.

    `result` must come from a run with keep_stage_states=True; gt_poses
    align with the context views.
    """
    stages = result.stage_states
    if not stages:
        raise ConfigError("training loss needs stage snapshots "
                          "(run optimize with keep_stage_states=True)")
    n_views = len(stages[0].xis)
    if len(gt_poses) != n_views:
        raise DimensionError(
            f"{len(gt_poses)} ground-truth poses for {n_views} views")

    d_terms = depth_stage_terms([st.depth for st in stages], gt_depth)
    d_total = discounted_sum(d_terms, gamma)

    view_terms: list[list[Tensor]] = []
    for i in range(n_views):
        view_terms.append(pose_stage_terms(
            [st.xis[i] for st in stages], gt_depth, gt_poses[i], intr))
    p_stage = [sum(vt[s] for vt in view_terms) / float(n_views)
               for s in range(len(stages))]
    p_total = discounted_sum(p_stage, gamma)

    per_stage = {
        "depth": [float(t.data) for t in d_terms],
        "pose": [float(t.data) for t in p_stage],
    }
    return total_loss("supervised", {"depth": d_total, "pose": p_total},
                      gamma=gamma, per_stage=per_stage)


def self_supervised_loss(result, reference: np.ndarray,
                         contexts: Sequence[np.ndarray], intr: Intrinsics,
                         alpha: float = ALPHA_DEFAULT,
                         lam: float = LAMBDA_DEFAULT,
                         gamma: float = GAMMA_DEFAULT) -> LossReport:
    """Assemble photometric + smoothness objectives from an optimization run.

    Depth snapshots are upsampled to image resolution; each context is
    warped into the reference frame with its stage pose before scoring.
    """
    stages = result.stage_states
    if not stages:
        raise ConfigError("training loss needs stage snapshots "
                          "(run optimize with keep_stage_states=True)")
    ref_t = T.constant(reference.astype(np.float32, copy=False))
    ctx_ts = [T.constant(c.astype(np.float32, copy=False)) for c in contexts]
    hw = reference.shape[1:]

    photo_terms, smooth_terms = [], []
    for st in stages:
        depth_up = _upsample_to(st.depth, hw)
        warped = []
        for xi, ctx_t in zip(st.xis, ctx_ts):
            coords, _ = warp_coords(depth_up, xi, intr)
            sampled, _ = T.bilinear_sample(ctx_t, coords)
            warped.append(sampled)
        photo_terms.append(loss_photometric(warped, ref_t, ctx_ts, alpha))
        smooth_terms.append(loss_smooth(depth_up, reference))

    photo = discounted_sum(photo_terms, gamma)
    smooth = discounted_sum(smooth_terms, gamma)
    per_stage = {
        "photo": [float(t.data) for t in photo_terms],
        "smooth": [float(t.data) for t in smooth_terms],
    }
    return total_loss("self_supervised", {"photo": photo, "smooth": smooth},
                      lam=lam, gamma=gamma, alpha=alpha, per_stage=per_stage)

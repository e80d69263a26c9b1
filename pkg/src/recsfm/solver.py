"""Recurrent optimization loop: alternating depth and pose refinement.

One *round* applies the GRU once to a single variable class: a depth round
updates the dense raw-depth state; a pose round updates every context view's
twist once.  The alternate schedule runs stages of n depth rounds followed by
n pose rounds (m stages by default); the joint schedule runs m*n rounds that
update both variable classes from one shared cost snapshot.

Trajectories record one entry per round plus the initialization; each entry's
mean cost is evaluated for that entry's variable snapshot, so entry 0 vs the
final entry compares the cost before and after optimization.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .cost import CostMap, average_cost, build_cost
from .errors import ConfigError, DimensionError, NumericsError
from .geometry import Intrinsics, Pose, se3_exp
from .network import DOWNSAMPLE, SfmNetwork
from .tensor import Tensor


@dataclass
class OptimizeConfig:
    stages: int = 3              # m
    updates_per_stage: int = 4   # n
    mode: str = "alternate"      # "alternate" or "joint"
    use_cost: bool = True
    total_rounds: int | None = None   # inference override; None = stages full sweep

    def __post_init__(self):
        if self.stages < 1 or self.updates_per_stage < 1:
            raise ConfigError(
                f"need stages >= 1 and updates_per_stage >= 1, got "
                f"{self.stages}, {self.updates_per_stage}")
        if self.mode not in ("alternate", "joint"):
            raise ConfigError(f"unknown mode {self.mode!r}")

    @property
    def rounds_per_stage(self) -> int:
        return (2 * self.updates_per_stage if self.mode == "alternate"
                else self.updates_per_stage)

    def resolve_rounds(self) -> int:
        if self.total_rounds is None:
            return self.stages * self.rounds_per_stage
        if self.total_rounds < 0:
            raise ConfigError(f"total_rounds must be >= 0, got {self.total_rounds}")
        if self.total_rounds % self.rounds_per_stage:
            raise ConfigError(
                f"total_rounds {self.total_rounds} is not a whole number of "
                f"stages (one stage = {self.rounds_per_stage} rounds)")
        return self.total_rounds


@dataclass
class TrajectoryEntry:
    iteration: int
    phase: str                 # "init", "depth", "pose", or "joint"
    stage: int                 # 0-based stage; -1 for the init entry
    mean_cost: float
    depth: np.ndarray          # (1,h,w) bounded depth snapshot, feature res
    poses: list[Pose]


@dataclass
class Trajectory:
    entries: list[TrajectoryEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def initial(self) -> TrajectoryEntry:
        return self.entries[0]

    @property
    def final(self) -> TrajectoryEntry:
        return self.entries[-1]


@dataclass
class StageState:
    """Differentiable snapshot taken at a stage boundary, for the losses."""

    depth: Tensor              # bounded depth (1,h,w), feature resolution
    xis: list[Tensor]          # one twist per context view


@dataclass
class OptimizeResult:
    depth: Tensor              # final bounded depth, feature resolution
    poses: list[Pose]
    xis: list[Tensor]
    trajectory: Trajectory | None
    stage_states: list[StageState]
    feature_intrinsics: Intrinsics


class SolverState:
    """All evolving quantities of one optimization run."""

    def __init__(self, model: SfmNetwork, cfg: OptimizeConfig,
                 f_ref: Tensor, f_ctxs: list[Tensor],
                 ctx_ref: Tensor, ctx_views: list[Tensor],
                 h_depth: Tensor, h_poses: list[Tensor],
                 raw_depth: Tensor, xis: list[Tensor], k_feat: Intrinsics):
        self.model = model
        self.cfg = cfg
        self.f_ref = f_ref
        self.f_ctxs = f_ctxs
        self.ctx_ref = ctx_ref
        self.ctx_views = ctx_views
        self.h_depth = h_depth
        self.h_poses = h_poses
        self.raw_depth = raw_depth
        self.xis = xis
        self.k_feat = k_feat
        self.round_index = 0

    @property
    def n_views(self) -> int:
        return len(self.f_ctxs)

    def depth(self) -> Tensor:
        return self.model.bounded_depth(self.raw_depth)

    def view_cost(self, i: int) -> CostMap:
        return build_cost(self.f_ref, self.f_ctxs[i], self.depth(),
                          self.xis[i], self.k_feat)

    def all_costs(self) -> list[CostMap]:
        return [self.view_cost(i) for i in range(self.n_views)]

    def _check_finite(self, what: str, arr: np.ndarray) -> None:
        if not np.isfinite(arr).all():
            raise NumericsError(
                f"non-finite {what} after round {self.round_index}")

    def update_depth(self, cost: CostMap) -> None:
        """One GRU step on the dense depth state; poses are untouched."""
        m_in = self.model.depth_gru_input(self.raw_depth, cost.values, cost.valid,
                                          self.ctx_ref, use_cost=self.cfg.use_cost)
        self.h_depth = self.model.depth_gru.step(self.h_depth, m_in)
        self.raw_depth = self.raw_depth + self.model.depth_delta(self.h_depth)
        self._check_finite("depth state", self.raw_depth.data)

    def update_pose(self, i: int, cost: CostMap) -> None:
        """One GRU step on view i's twist; depth and other views untouched."""
        m_in = self.model.pose_gru_input(self.xis[i], cost.values, cost.valid,
                                         self.ctx_views[i], use_cost=self.cfg.use_cost)
        self.h_poses[i] = self.model.pose_gru.step(self.h_poses[i], m_in)
        self.xis[i] = self.xis[i] + self.model.pose_delta(self.h_poses[i])
        self._check_finite(f"pose {i}", self.xis[i].data)

    # -- recording -------------------------------------------------------

    def snapshot_poses(self) -> list[Pose]:
        return [se3_exp(xi.data.astype(np.float64)) for xi in self.xis]

    def mean_cost_now(self) -> float:
        with T.no_grad():
            return average_cost(self.all_costs()).mean_value()

    def record(self, trajectory: Trajectory | None, phase: str, stage: int) -> None:
        if trajectory is None:
            return
        trajectory.entries.append(TrajectoryEntry(
            iteration=self.round_index, phase=phase, stage=stage,
            mean_cost=self.mean_cost_now(),
            depth=self.depth().data.copy(), poses=self.snapshot_poses()))


def optimize(model: SfmNetwork, reference: np.ndarray, contexts: list[np.ndarray],
             intr: Intrinsics, cfg: OptimizeConfig, *, record: bool = True,
             keep_stage_states: bool = False) -> OptimizeResult:
    """Run the full recurrent refinement on one sample.

    reference/contexts: (3,H,W) arrays in [0,1]; N = len(contexts) >= 1.
    With keep_stage_states the autodiff graph is retained and per-stage
    differentiable snapshots are returned for training; otherwise the whole
    run executes without graph construction.
    """
    if not contexts:
        raise ConfigError("optimize needs at least one context view (N >= 1)")
    if reference.ndim != 3 or reference.shape[0] != 3:
        raise DimensionError(f"reference must be (3,H,W), got {reference.shape}")
    h, w = reference.shape[1:]
    if (h, w) != (intr.height, intr.width):
        raise DimensionError(
            f"image {h}x{w} does not match intrinsics {intr.height}x{intr.width}")
    for c in contexts:
        if c.shape != reference.shape:
            raise DimensionError(
                f"context shape {c.shape} != reference shape {reference.shape}")

    if keep_stage_states:
        return _optimize_impl(model, reference, contexts, intr, cfg,
                              record, keep_stage_states=True)
    with T.no_grad():
        return _optimize_impl(model, reference, contexts, intr, cfg,
                              record, keep_stage_states=False)


def _optimize_impl(model, reference, contexts, intr, cfg, record, keep_stage_states):
    rounds = cfg.resolve_rounds()
    n = cfg.updates_per_stage

    ref_t = T.constant(reference.astype(np.float32, copy=False))
    ctx_ts = [T.constant(c.astype(np.float32, copy=False)) for c in contexts]

    f_ref = model.encode_features(ref_t)
    ctx_ref, h_depth = model.encode_context(ref_t)
    f_ctxs, ctx_views, h_poses = [], [], []
    for ct in ctx_ts:
        f_ctxs.append(model.encode_features(ct))
        cv, hp = model.encode_context(ct)
        ctx_views.append(cv)
        h_poses.append(hp)

    raw0 = model.depth_init_raw(f_ref)
    xis0 = [model.pose_init(f_ref, fc) for fc in f_ctxs]
    k_feat = intr.scaled(DOWNSAMPLE)

    state = SolverState(model, cfg, f_ref, f_ctxs, ctx_ref, ctx_views,
                        h_depth, h_poses, raw0, xis0, k_feat)
    trajectory = Trajectory() if record else None
    state.record(trajectory, "init", -1)

    stage_states: list[StageState] = []
    executed = 0
    stage = 0
    while executed < rounds:
        if cfg.mode == "alternate":
            for _ in range(n):
                cost = average_cost(state.all_costs())
                state.update_depth(cost)
                state.round_index += 1
                state.record(trajectory, "depth", stage)
            for _ in range(n):
                for i in range(state.n_views):
                    state.update_pose(i, state.view_cost(i))
                state.round_index += 1
                state.record(trajectory, "pose", stage)
            executed += 2 * n
        else:
            for _ in range(n):
                costs = state.all_costs()
                avg = average_cost(costs)
                # both variable classes read the same cost snapshot
                pose_inputs = [(i, costs[i]) for i in range(state.n_views)]
                state.update_depth(avg)
                for i, cm in pose_inputs:
                    state.update_pose(i, cm)
                state.round_index += 1
                state.record(trajectory, "joint", stage)
            executed += n
        if keep_stage_states:
            stage_states.append(StageState(depth=state.depth(),
                                           xis=list(state.xis)))
        stage += 1

    return OptimizeResult(depth=state.depth(), poses=state.snapshot_poses(),
                          xis=list(state.xis), trajectory=trajectory,
                          stage_states=stage_states, feature_intrinsics=k_feat)


def run_on_sample(model: SfmNetwork, sample, cfg: OptimizeConfig, *,
                  views: int | None = None, record: bool = True,
                  keep_stage_states: bool = False) -> OptimizeResult:
    """Optimize on a dataset sample, optionally limiting the context count.

    N = 1 degenerates to the two-view pipeline: the same code path runs with
    a single context, no special casing anywhere.
    """
    contexts = sample.contexts if views is None else sample.contexts[:views]
    if views is not None and len(sample.contexts) < views:
        raise ConfigError(
            f"sample {sample.sample_id} has {len(sample.contexts)} context "
            f"views, requested {views}")
    return optimize(model, sample.reference, list(contexts), sample.intrinsics,
                    cfg, record=record, keep_stage_states=keep_stage_states)


def export_trajectory(trajectory: Trajectory, path, gt_depth: np.ndarray | None = None,
                      gt_poses: list[Pose] | None = None) -> None:
    """Write one line per entry: iter, phase, mean cost, optional GT errors.

    Depth error is abs_rel of the (bilinearly upsampled) snapshot against GT;
    pose error is the mean geodesic rotation angle to GT in degrees.  Both
    print as '-' when no ground truth is supplied.
    """
    from .metrics import depth_metrics, rotation_angle_deg

    lines = ["# iter phase mean_cost abs_rel rot_deg"]
    for e in trajectory.entries:
        if gt_depth is not None:
            factor = gt_depth.shape[-1] // e.depth.shape[-1]
            with T.no_grad():
                up = T.bilinear_upsample(T.constant(e.depth), factor,
                                         out_hw=gt_depth.shape[1:])
            abs_rel = f"{depth_metrics(up.data, gt_depth)['abs_rel']:.6f}"
        else:
            abs_rel = "-"
        if gt_poses is not None:
            degs = [rotation_angle_deg(p.rotation, g.rotation)
                    for p, g in zip(e.poses, gt_poses)]
            rot = f"{float(np.mean(degs)):.6f}"
        else:
            rot = "-"
        lines.append(f"{e.iteration} {e.phase} {e.mean_cost:.8f} {abs_rel} {rot}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")

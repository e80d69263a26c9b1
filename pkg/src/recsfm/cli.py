"""Command-line entry point: dataset generation, training, inference,
evaluation, and the iteration/efficiency benchmark.

Exit codes: 0 success, 2 usage/config error, 3 data error, 4 numerics
error.  Every command accepts ``--config FILE`` (INI, one section per
command) and writes its fully resolved settings next to its outputs.
``DRO_SEED`` serves as the seed fallback when neither flag nor config
provides one.

Iteration units: one iteration is one depth update plus one pose update.
``--iters`` therefore counts refinement iterations, and a checkpoint
trained with n updates per stage accepts only whole stages, i.e.
multiples of n.
"""

from __future__ import annotations

import functools
import os
import shutil
import sys
import time
import tracemalloc

import click
import numpy as np

from . import config as cfgmod
from . import tensor as T
from .checkpoint import Checkpoint, load_checkpoint, restore_parameters, save_checkpoint
from .data import (
    SceneSample,
    SceneSpec,
    default_intrinsics,
    generate_dataset,
    init_dataset_dir,
    load_sequence,
    read_depth,
    save_sample,
    write_depth,
)
from .errors import (
    ConfigError,
    DomainError,
    FormatError,
    GenerationError,
    IoError,
    NumericsError,
    RecsfmError,
    UsageError,
)
from .geometry import parse_pose_line, pose_to_line
from .losses import self_supervised_loss, supervised_loss
from .metrics import average_metrics, depth_metrics, format_table, pose_metrics
from .network import ModelConfig, SfmNetwork
from .optim import AdamState, adam_step, clip_grad_norm
from .solver import OptimizeConfig, export_trajectory, run_on_sample
from .visualize import save_depth_color

_EXIT_USAGE = 2
_EXIT_DATA = 3
_EXIT_NUMERICS = 4

_ERROR_CODES = (
    ((UsageError, ConfigError), _EXIT_USAGE),
    ((IoError, FormatError, GenerationError, DomainError), _EXIT_DATA),
    ((NumericsError,), _EXIT_NUMERICS),
)


def _guarded(fn):
    """Translate domain errors into documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except RecsfmError as exc:
            for classes, code in _ERROR_CODES:
                if isinstance(exc, classes):
                    click.echo(f"error: {exc}", err=True)
                    sys.exit(code)
            raise  # internal bug classes (graph/dimension) keep their traceback
        except OSError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(_EXIT_DATA)

    return wrapper


def _resolve(command: str, config_path: str | None, flags: dict) -> dict:
    return cfgmod.resolve(command, flags, cfgmod.read_config(config_path, command))


def _require(resolved: dict, *keys: str) -> None:
    for key in keys:
        if resolved.get(key) in (None, ""):
            raise UsageError(f"missing required setting --{key.replace('_', '-')}")


def _write_run_config(out_dir: str, command: str, resolved: dict) -> None:
    cfgmod.write_resolved(os.path.join(out_dir, "run_config.ini"), command, resolved)


@click.group()
@click.version_option(package_name="recsfm", prog_name="recsfm")
def main():
    """Recurrent structure-from-motion on synthetic desk-scale scenes."""


# ---------------------------------------------------------------------------
# gen


@main.command("gen")
@click.option("--config", "config_path", default=None, help="INI config file.")
@click.option("--out", default=None, help="Output dataset directory.")
@click.option("--count", type=int, default=None, help="Number of samples.")
@click.option("--seed", type=int, default=None, help="Generator seed (falls back to DRO_SEED).")
@click.option("--width", type=int, default=None)
@click.option("--height", type=int, default=None)
@click.option("--views", type=int, default=None, help="Context views per sample.")
@click.option("--geometry", default=None,
              help="Scene family: mixed, fronto-parallel, tilted, two-plane-step, sphere-on-plane.")
@click.option("--texture", default=None)
@click.option("--max-rotation-deg", type=float, default=None)
@click.option("--max-translation", type=float, default=None)
@click.option("--depth-min", type=float, default=None)
@click.option("--depth-max", type=float, default=None)
@click.option("--noise-std", type=float, default=None, help="Per-pixel image noise sigma.")
@click.option("--supersample", type=int, default=None)
@click.option("--gt-depth/--no-gt-depth", "gt_depth", default=None,
              help="Store ground-truth depth maps (on by default).")
@click.option("--gt-poses/--no-gt-poses", "gt_poses", default=None,
              help="Store ground-truth poses (on by default).")
@click.option("--force/--no-force", default=None,
              help="Overwrite an existing non-empty output directory.")
@_guarded
def cmd_gen(config_path, **flags):
    """Generate a synthetic multi-view dataset with exact ground truth."""
    r = _resolve("gen", config_path, flags)
    _require(r, "out")
    if r["count"] < 1:
        raise UsageError(f"--count must be >= 1, got {r['count']}")
    out = r["out"]
    existing = [p for p in (os.path.join(out, "manifest.txt"),
                            os.path.join(out, "images")) if os.path.exists(p)]
    if os.path.isdir(out) and os.listdir(out) and not r["force"]:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")
    if r["force"]:
        for path in existing:
            if os.path.isdir(path):
                shutil.rmtree(path)
            else:
                os.remove(path)

    spec = SceneSpec(seed=r["seed"], width=r["width"], height=r["height"],
                     n_views=r["views"], geometry=r["geometry"],
                     texture=r["texture"], max_rotation_deg=r["max_rotation_deg"],
                     max_translation=r["max_translation"], depth_min=r["depth_min"],
                     depth_max=r["depth_max"], noise_std=r["noise_std"],
                     supersample=r["supersample"])
    comments = [f"{key} {r[key]}" for key in
                ("geometry", "texture", "seed", "count", "views", "width",
                 "height", "depth_min", "depth_max", "max_rotation_deg",
                 "max_translation", "noise_std", "supersample")]
    init_dataset_dir(out, default_intrinsics(r["width"], r["height"]), comments)
    written = 0
    for sample in generate_dataset(spec, r["count"]):
        if not r["gt_depth"]:
            sample = SceneSample(reference=sample.reference, contexts=sample.contexts,
                                 intrinsics=sample.intrinsics, gt_depth=None,
                                 gt_poses=sample.gt_poses, sample_id=sample.sample_id)
        if not r["gt_poses"]:
            sample = SceneSample(reference=sample.reference, contexts=sample.contexts,
                                 intrinsics=sample.intrinsics, gt_depth=sample.gt_depth,
                                 gt_poses=None, sample_id=sample.sample_id)
        save_sample(sample, out)
        written += 1
    _write_run_config(out, "gen", r)
    click.echo(f"wrote {written} samples to {out}")


# ---------------------------------------------------------------------------
# train


def _lr_for_epoch(epoch: int, total: int, lr_start: float, lr_end: float) -> float:
    """Geometric decay across epochs, lr_start at epoch 0, lr_end at the last."""
    if total <= 1:
        return lr_start
    frac = epoch / (total - 1)
    return float(lr_start * (lr_end / lr_start) ** frac)


def _optim_meta(r: dict) -> dict[str, str]:
    return {
        "optim.stages": str(r["stages"]),
        "optim.updates_per_stage": str(r["updates_per_stage"]),
        "optim.mode": r["opt_mode"],
        "optim.use_cost": "true" if r["use_cost"] else "false",
    }


def _model_from_checkpoint(ckpt: Checkpoint) -> SfmNetwork:
    model = SfmNetwork(ModelConfig.from_meta(ckpt.meta))
    restore_parameters(model.params, ckpt)
    return model


@main.command("train")
@click.option("--config", "config_path", default=None, help="INI config file.")
@click.option("--dataset", default=None, help="Training dataset directory.")
@click.option("--out", default=None, help="Output directory for checkpoints and log.")
@click.option("--mode", default=None, help="Objective: supervised or self.")
@click.option("--epochs", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--limit", type=int, default=None, help="Use only the first K samples (0 = all).")
@click.option("--views", type=int, default=None, help="Context views per sample (0 = all).")
@click.option("--lr-start", type=float, default=None)
@click.option("--lr-end", type=float, default=None)
@click.option("--clip-norm", type=float, default=None, help="Gradient norm clip (0 disables).")
@click.option("--gamma", type=float, default=None, help="Per-stage loss discount.")
@click.option("--alpha", type=float, default=None, help="Structural/absolute photometric mix.")
@click.option("--lam", type=float, default=None, help="Smoothness weight.")
@click.option("--stages", type=int, default=None, help="Refinement stages m.")
@click.option("--updates-per-stage", type=int, default=None, help="GRU updates per stage n.")
@click.option("--opt-mode", default=None, help="alternate or joint.")
@click.option("--use-cost/--no-use-cost", "use_cost", default=None,
              help="Feed the matching cost to the GRUs (ablation switch).")
@click.option("--feat-channels", type=int, default=None)
@click.option("--context-channels", type=int, default=None)
@click.option("--hidden-channels", type=int, default=None)
@click.option("--pv-channels", type=int, default=None)
@click.option("--pc-channels", type=int, default=None)
@click.option("--d-min", type=float, default=None)
@click.option("--d-max", type=float, default=None)
@click.option("--resume", default=None, help="Checkpoint to continue from.")
@_guarded
def cmd_train(config_path, **flags):
    """Train the refinement network end to end on a generated dataset."""
    r = _resolve("train", config_path, flags)
    _require(r, "dataset", "out")
    if r["mode"] not in ("supervised", "self"):
        raise UsageError(f"--mode must be supervised or self, got {r['mode']!r}")
    if r["epochs"] < 1:
        raise UsageError(f"--epochs must be >= 1, got {r['epochs']}")

    samples = load_sequence(r["dataset"])
    if r["limit"]:
        samples = samples[: r["limit"]]
    if not samples:
        raise UsageError(f"dataset {r['dataset']} holds no samples")
    if r["mode"] == "supervised":
        for s in samples:
            if s.gt_depth is None or s.gt_poses is None:
                raise UsageError(
                    f"--mode supervised needs ground-truth depth and poses; "
                    f"sample {s.sample_id} lacks them")

    ocfg = OptimizeConfig(stages=r["stages"], updates_per_stage=r["updates_per_stage"],
                          mode=r["opt_mode"], use_cost=r["use_cost"])
    if r["resume"]:
        ckpt = load_checkpoint(r["resume"])
        model = _model_from_checkpoint(ckpt)
        adam = ckpt.adam or AdamState.for_params(model.params)
        start_epoch = int(ckpt.meta.get("train.epoch", "0"))
        step = int(ckpt.meta.get("train.step", "0"))
    else:
        mcfg = ModelConfig(feat_channels=r["feat_channels"],
                           context_channels=r["context_channels"],
                           hidden_channels=r["hidden_channels"],
                           pv_channels=r["pv_channels"], pc_channels=r["pc_channels"],
                           d_min=r["d_min"], d_max=r["d_max"], seed=r["seed"])
        model = SfmNetwork(mcfg)
        adam = AdamState.for_params(model.params)
        start_epoch = 0
        step = 0
    if start_epoch >= r["epochs"]:
        raise UsageError(
            f"checkpoint already covers {start_epoch} epochs; --epochs is {r['epochs']}")

    os.makedirs(r["out"], exist_ok=True)
    _write_run_config(r["out"], "train", r)
    views = r["views"] or None
    log_path = os.path.join(r["out"], "train_log.txt")
    with open(log_path, "a" if r["resume"] else "w") as log:
        if not r["resume"]:
            log.write("# one line per training step\n")
        for epoch in range(start_epoch, r["epochs"]):
            lr = _lr_for_epoch(epoch, r["epochs"], r["lr_start"], r["lr_end"])
            order = np.random.default_rng([r["seed"], 7, epoch]).permutation(len(samples))
            for idx in order:
                sample = samples[int(idx)]
                step += 1
                try:
                    result = run_on_sample(model, sample, ocfg, views=views,
                                           record=False, keep_stage_states=True)
                    if r["mode"] == "supervised":
                        report = supervised_loss(result, sample.gt_depth,
                                                 sample.gt_poses, sample.intrinsics,
                                                 gamma=r["gamma"])
                    else:
                        contexts = sample.contexts if views is None else sample.contexts[:views]
                        report = self_supervised_loss(result, sample.reference,
                                                      contexts, sample.intrinsics,
                                                      alpha=r["alpha"], lam=r["lam"],
                                                      gamma=r["gamma"])
                    if not np.isfinite(report.total.data):
                        raise NumericsError("loss is not finite")
                    for p in model.params:
                        p.zero_grad()
                    T.backward(report.total)
                    if r["clip_norm"] > 0:
                        clip_grad_norm(model.params, r["clip_norm"])
                    adam_step(model.params, adam, lr)
                except NumericsError as exc:
                    raise NumericsError(f"training aborted at step {step}: {exc}") from exc
                line = (f"epoch={epoch}\tstep={step}\tsample={sample.sample_id}"
                        f"\tlr={lr:.6g}\t{report.to_line()}")
                log.write(line + "\n")
                log.flush()
                click.echo(line)
            meta = dict(model.cfg.to_meta())
            meta.update(_optim_meta(r))
            meta.update({"train.epoch": str(epoch + 1), "train.step": str(step),
                         "train.mode": r["mode"], "train.seed": str(r["seed"])})
            epoch_path = os.path.join(r["out"], f"epoch_{epoch + 1:03d}.ckpt")
            save_checkpoint(epoch_path, model.params, adam, meta)
            save_checkpoint(os.path.join(r["out"], "latest.ckpt"), model.params, adam, meta)
            click.echo(f"checkpoint written: {epoch_path}")


# ---------------------------------------------------------------------------
# infer


def _schedule_from(ckpt_meta: dict, r: dict) -> OptimizeConfig:
    """Build the inference schedule: checkpoint defaults, flag overrides."""
    n = int(ckpt_meta.get("optim.updates_per_stage", "4"))
    trained_stages = int(ckpt_meta.get("optim.stages", "3"))
    mode = r["opt_mode"] or ckpt_meta.get("optim.mode", "alternate")
    if r["use_cost"] == "":
        use_cost = ckpt_meta.get("optim.use_cost", "true") == "true"
    else:
        use_cost = cfgmod.parse_bool(r["use_cost"])
    iters = r["iters"]
    if iters < 0:
        iters = trained_stages * n
    if iters % n:
        raise UsageError(
            f"--iters must be a multiple of the trained updates-per-stage n={n} "
            f"(whole stages only; one iteration = one depth update + one pose "
            f"update), got {iters}")
    rounds = 2 * iters if mode == "alternate" else iters
    return OptimizeConfig(stages=max(1, iters // n), updates_per_stage=n,
                          mode=mode, use_cost=use_cost, total_rounds=rounds)


def _upsampled_depth(result, sample) -> np.ndarray:
    """Final depth at image resolution, (1,H,W) float."""
    hw = sample.reference.shape[1:]
    factor = hw[1] // result.depth.data.shape[-1]
    with T.no_grad():
        up = T.bilinear_upsample(T.constant(result.depth.data), factor, out_hw=hw)
    return up.data


@main.command("infer")
@click.option("--config", "config_path", default=None, help="INI config file.")
@click.option("--checkpoint", default=None, help="Trained checkpoint file.")
@click.option("--data", default=None, help="Input dataset directory.")
@click.option("--out", default=None, help="Output directory.")
@click.option("--views", type=int, default=None, help="Context views to use (0 = all).")
@click.option("--iters", type=int, default=None,
              help="Refinement iterations (depth+pose pairs); -1 = trained schedule, "
                   "0 = initialization only.")
@click.option("--limit", type=int, default=None, help="Process only the first K samples.")
@click.option("--opt-mode", default=None, help="Override update mode: alternate or joint.")
@click.option("--use-cost", default=None,
              help="Override cost input: true or false (default: as trained).")
@_guarded
def cmd_infer(config_path, **flags):
    """Run refinement on a sequence; write depth, poses, and trajectories."""
    r = _resolve("infer", config_path, flags)
    _require(r, "checkpoint", "data", "out")
    ckpt = load_checkpoint(r["checkpoint"])
    model = _model_from_checkpoint(ckpt)
    ocfg = _schedule_from(ckpt.meta, r)

    samples = load_sequence(r["data"])
    if r["limit"]:
        samples = samples[: r["limit"]]
    out = r["out"]
    for sub in ("depth", "color", "poses", "trajectory"):
        os.makedirs(os.path.join(out, sub), exist_ok=True)

    index_lines = ["# id depth poses trajectory n_views"]
    views = r["views"] or None
    for sample in samples:
        result = run_on_sample(model, sample, ocfg, views=views, record=True)
        depth = _upsampled_depth(result, sample)
        sid = sample.sample_id
        write_depth(os.path.join(out, "depth", f"{sid}.png"), depth)
        save_depth_color(os.path.join(out, "color", f"{sid}.png"), depth,
                         vmin=model.cfg.d_min, vmax=model.cfg.d_max)
        pose_lines = ["# refined context poses, 12 row-major [R|t] numbers per line"]
        pose_lines += [pose_to_line(p) for p in result.poses]
        with open(os.path.join(out, "poses", f"{sid}.txt"), "w") as fh:
            fh.write("\n".join(pose_lines) + "\n")
        n_used = len(result.poses)
        gt_poses = sample.gt_poses[:n_used] if sample.gt_poses is not None else None
        export_trajectory(result.trajectory,
                          os.path.join(out, "trajectory", f"{sid}.txt"),
                          gt_depth=sample.gt_depth, gt_poses=gt_poses)
        index_lines.append(f"{sid} depth/{sid}.png poses/{sid}.txt "
                           f"trajectory/{sid}.txt {n_used}")
    with open(os.path.join(out, "predictions.txt"), "w") as fh:
        fh.write("\n".join(index_lines) + "\n")
    _write_run_config(out, "infer", r)
    click.echo(f"processed {len(samples)} samples into {out}")


# ---------------------------------------------------------------------------
# eval


def _load_pose_file(path: str):
    poses = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                poses.append(parse_pose_line(line))
    return poses


def _load_predictions(pred_dir: str):
    """Read predictions from an infer output dir or a dataset directory.

    Returns {id: (depth (1,H,W) | None, poses list | None)}.
    """
    manifest = os.path.join(pred_dir, "manifest.txt")
    if os.path.exists(manifest):
        return {s.sample_id: (s.gt_depth, s.gt_poses) for s in load_sequence(pred_dir)}
    depth_dir = os.path.join(pred_dir, "depth")
    if not os.path.isdir(depth_dir):
        raise IoError(f"{pred_dir} is neither an inference output "
                      f"(depth/ subdirectory) nor a dataset (manifest.txt)")
    preds = {}
    for name in sorted(os.listdir(depth_dir)):
        if not name.endswith(".png"):
            continue
        sid = name[:-4]
        depth = read_depth(os.path.join(depth_dir, name))
        pose_path = os.path.join(pred_dir, "poses", f"{sid}.txt")
        poses = _load_pose_file(pose_path) if os.path.exists(pose_path) else None
        preds[sid] = (depth, poses)
    return preds


@main.command("eval")
@click.option("--config", "config_path", default=None, help="INI config file.")
@click.option("--pred", default=None, help="Predictions: infer output dir or dataset dir.")
@click.option("--gt", default=None, help="Ground-truth dataset directory.")
@click.option("--out", default=None, help="Directory for metrics files (default: pred dir).")
@click.option("--median-scale/--no-median-scale", "median_scale", default=None,
              help="Scale predictions by median(gt)/median(pred) before scoring.")
@_guarded
def cmd_eval(config_path, **flags):
    """Score predicted depth and poses against dataset ground truth."""
    r = _resolve("eval", config_path, flags)
    _require(r, "pred", "gt")
    gt_samples = {s.sample_id: s for s in load_sequence(r["gt"])}
    preds = _load_predictions(r["pred"])

    missing = sorted(set(gt_samples) - set(preds))
    extra = sorted(set(preds) - set(gt_samples))
    if missing or extra:
        raise UsageError(
            f"prediction/ground-truth id mismatch: missing predictions for "
            f"{missing or 'none'}, predictions without ground truth: {extra or 'none'}")

    depth_rows, pose_rows, ids = [], [], sorted(gt_samples)
    depth_ids, pose_ids = [], []
    for sid in ids:
        gt = gt_samples[sid]
        pred_depth, pred_poses = preds[sid]
        if pred_depth is not None and gt.gt_depth is not None:
            depth_rows.append(depth_metrics(pred_depth, gt.gt_depth,
                                            median_scale=r["median_scale"]))
            depth_ids.append(sid)
        if pred_poses is not None and gt.gt_poses is not None:
            per_view = [pose_metrics(p, g) for p, g in zip(pred_poses, gt.gt_poses)]
            pose_rows.append(average_metrics(per_view))
            pose_ids.append(sid)
    if not depth_rows and not pose_rows:
        raise UsageError("nothing to evaluate: no overlapping depth or pose data")

    sections = []
    for label, rows, row_ids in (("depth", depth_rows, depth_ids),
                                 ("pose", pose_rows, pose_ids)):
        if not rows:
            continue
        keys = list(rows[0].keys())
        table_lines = ["id\t" + "\t".join(keys)]
        for sid, row in zip(row_ids, rows):
            table_lines.append(sid + "\t" + "\t".join(f"{row[k]:.9g}" for k in keys))
        agg = average_metrics(rows)
        agg_table = format_table(
            agg, title=f"aggregate {label} metrics (mean over {len(rows)} samples)")
        sections.append(f"# per-sample {label} metrics\n" + "\n".join(table_lines)
                        + "\n\n" + agg_table)
        click.echo(agg_table)

    out = r["out"] or r["pred"]
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "metrics.txt"), "w") as fh:
        fh.write("\n\n".join(sections) + "\n")
    _write_run_config(out, "eval", r)


# ---------------------------------------------------------------------------
# bench


def _parse_iter_list(text: str) -> list[int]:
    try:
        values = [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"--iters must be comma-separated integers, got {text!r}") from exc
    if not values:
        raise UsageError("--iters lists no iteration counts")
    if any(v < 0 for v in values):
        raise UsageError(f"iteration counts must be >= 0, got {values}")
    return values


@main.command("bench")
@click.option("--config", "config_path", default=None, help="INI config file.")
@click.option("--checkpoint", default=None, help="Trained checkpoint file.")
@click.option("--data", default=None, help="Dataset directory (needs GT depth for abs_rel).")
@click.option("--out", default=None, help="Output directory for the benchmark table.")
@click.option("--iters", default=None, help="Comma-separated iteration counts.")
@click.option("--runs", type=int, default=None, help="Timing repetitions (median reported).")
@click.option("--limit", type=int, default=None, help="Samples per run.")
@click.option("--views", type=int, default=None, help="Context views to use (0 = all).")
@_guarded
def cmd_bench(config_path, **flags):
    """Measure wall time, memory, and accuracy against iteration count."""
    r = _resolve("bench", config_path, flags)
    _require(r, "checkpoint", "data", "out")
    if r["runs"] < 5:
        raise UsageError(f"--runs must be >= 5 for stable medians, got {r['runs']}")
    ckpt = load_checkpoint(r["checkpoint"])
    model = _model_from_checkpoint(ckpt)

    samples = load_sequence(r["data"])
    if r["limit"]:
        samples = samples[: r["limit"]]
    samples = [s for s in samples if s.gt_depth is not None]
    if not samples:
        raise UsageError("benchmark needs samples with ground-truth depth")
    views = r["views"] or None

    rows = []
    for iters in _parse_iter_list(r["iters"]):
        ocfg = _schedule_from(ckpt.meta, {"iters": iters, "opt_mode": "", "use_cost": ""})

        times = []
        for _ in range(r["runs"]):
            t0 = time.perf_counter()
            for s in samples:
                run_on_sample(model, s, ocfg, views=views, record=False)
            times.append((time.perf_counter() - t0) / len(samples))
        median_t = float(np.median(times))

        tracemalloc.start()
        run_on_sample(model, samples[0], ocfg, views=views, record=False)
        peak_mb = tracemalloc.get_traced_memory()[1] / 1e6
        tracemalloc.stop()

        metric_rows = []
        for s in samples:
            res = run_on_sample(model, s, ocfg, views=views, record=False)
            metric_rows.append(depth_metrics(_upsampled_depth(res, s), s.gt_depth))
        abs_rel = average_metrics(metric_rows)["abs_rel"]
        rows.append((iters, median_t, peak_mb, abs_rel))

    header = f"{'iters':>6} {'time_s':>10} {'mem_mb':>8} {'abs_rel':>9}"
    lines = [header]
    for iters, t, mem, rel in rows:
        lines.append(f"{iters:>6d} {t:>10.4f} {mem:>8.1f} {rel:>9.4f}")
    table = "\n".join(lines)
    click.echo(table)
    os.makedirs(r["out"], exist_ok=True)
    with open(os.path.join(r["out"], "bench.txt"), "w") as fh:
        fh.write(table + "\n")
    _write_run_config(r["out"], "bench", r)


if __name__ == "__main__":
    main()

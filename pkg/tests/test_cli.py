"""End-to-end command-line tests: gen -> train -> infer -> eval -> bench.

Module-scoped fixtures build one tiny dataset and one short training run
that the later commands share; everything runs through CliRunner so exit
codes and console output are part of the contract under test.
"""

import os
import re

import numpy as np
import pytest
from click.testing import CliRunner

from recsfm.checkpoint import load_checkpoint, restore_parameters, save_checkpoint
from recsfm.cli import main
from recsfm.data import load_sequence, read_depth, write_depth
from recsfm.network import ModelConfig, SfmNetwork
from recsfm.solver import OptimizeConfig, run_on_sample
from recsfm import tensor as T
from recsfm.tensor import Parameter

RUNNER = CliRunner()

GEN_ARGS = ["--count", "8", "--seed", "3", "--width", "32", "--height", "32",
            "--depth-min", "2", "--depth-max", "6"]
MODEL_ARGS = ["--stages", "2", "--updates-per-stage", "2",
              "--feat-channels", "8", "--context-channels", "8",
              "--hidden-channels", "8", "--pv-channels", "4", "--pc-channels", "4",
              "--d-min", "1", "--d-max", "8"]
TRAIN_ARGS = MODEL_ARGS + ["--seed", "0", "--limit", "6",
                           "--lr-start", "2e-3", "--lr-end", "1e-3"]


def run(args, env=None):
    result = RUNNER.invoke(main, args, env=env, catch_exceptions=False)
    return result


def run_ok(args, env=None):
    result = run(args, env=env)
    assert result.exit_code == 0, result.output
    return result


@pytest.fixture(scope="module")
def ds_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "ds")
    run_ok(["gen", "--out", out] + GEN_ARGS)
    return out


@pytest.fixture(scope="module")
def nogt_dir(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("cli") / "nogt")
    run_ok(["gen", "--out", out, "--count", "3", "--seed", "4", "--width", "32",
            "--height", "32", "--no-gt-depth", "--no-gt-poses"])
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, ds_dir):
    out = str(tmp_path_factory.mktemp("cli") / "run")
    run_ok(["train", "--dataset", ds_dir, "--out", out, "--epochs", "3"] + TRAIN_ARGS)
    return out


@pytest.fixture(scope="module")
def pred_dir(tmp_path_factory, ds_dir, run_dir):
    out = str(tmp_path_factory.mktemp("cli") / "pred")
    run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
            "--data", ds_dir, "--out", out])
    return out


def read_log_totals(log_path):
    """[(epoch, sample_id, total), ...] parsed from a training log."""
    rows = []
    pattern = re.compile(r"epoch=(\d+)\tstep=\d+\tsample=(\S+)\t.*?total=([\d.]+)")
    for line in open(log_path):
        m = pattern.search(line)
        if m:
            rows.append((int(m.group(1)), m.group(2), float(m.group(3))))
    return rows


class TestGen:
    def test_dataset_complete(self, ds_dir):
        samples = load_sequence(ds_dir)
        assert len(samples) == 8
        assert os.path.exists(os.path.join(ds_dir, "run_config.ini"))

    def test_refuses_nonempty_without_force(self, ds_dir):
        result = run(["gen", "--out", ds_dir] + GEN_ARGS)
        assert result.exit_code == 2
        assert "--force" in result.output

    def test_force_rerun_is_bit_identical(self, tmp_path):
        out = str(tmp_path / "twice")
        args = ["gen", "--out", out, "--count", "2", "--seed", "11",
                "--width", "32", "--height", "32"]
        run_ok(args)
        manifest = os.path.join(out, "manifest.txt")
        image = os.path.join(out, "images", "s00000_ref.png")
        before = (open(manifest, "rb").read(), open(image, "rb").read())
        run_ok(args + ["--force"])
        after = (open(manifest, "rb").read(), open(image, "rb").read())
        assert before == after

    def test_geometry_echoed_in_manifest(self, tmp_path):
        out = str(tmp_path / "steps")
        run_ok(["gen", "--out", out, "--count", "1", "--width", "32",
                "--height", "32", "--geometry", "two-plane-step"])
        text = open(os.path.join(out, "manifest.txt")).read()
        assert "two-plane-step" in text

    def test_unwritable_destination(self, tmp_path):
        blocker = tmp_path / "file.txt"
        blocker.write_text("in the way")
        result = run(["gen", "--out", str(blocker / "ds"), "--count", "1"])
        assert result.exit_code == 3

    def test_env_seed_fallback(self, tmp_path):
        outs = [str(tmp_path / n) for n in ("a", "b", "c")]
        for out, seed in zip(outs, ("9", "9", "10")):
            run_ok(["gen", "--out", out, "--count", "1", "--width", "32",
                    "--height", "32"], env={"DRO_SEED": seed})
        imgs = [open(os.path.join(o, "images", "s00000_ref.png"), "rb").read()
                for o in outs]
        assert imgs[0] == imgs[1]
        assert imgs[0] != imgs[2]

    def test_bad_count(self, tmp_path):
        result = run(["gen", "--out", str(tmp_path / "x"), "--count", "0"])
        assert result.exit_code == 2


class TestConfigFile:
    def test_file_supplies_flags_override(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[gen]\ncount = 2\nseed = 5\nwidth = 32\nheight = 32\n")
        out = str(tmp_path / "ds")
        run_ok(["gen", "--config", str(ini), "--out", out, "--count", "1"])
        assert len(load_sequence(out)) == 1
        resolved = open(os.path.join(out, "run_config.ini")).read()
        assert "count = 1" in resolved   # flag beat the file
        assert "seed = 5" in resolved    # file beat the default

    def test_unknown_key_rejected(self, tmp_path):
        ini = tmp_path / "run.ini"
        ini.write_text("[gen]\nfrobnicate = 1\n")
        result = run(["gen", "--config", str(ini), "--out", str(tmp_path / "ds")])
        assert result.exit_code == 2
        assert "frobnicate" in result.output


class TestTrain:
    def test_checkpoint_every_epoch(self, run_dir):
        for name in ("epoch_001.ckpt", "epoch_002.ckpt", "epoch_003.ckpt", "latest.ckpt"):
            assert os.path.exists(os.path.join(run_dir, name))
        latest = open(os.path.join(run_dir, "latest.ckpt"), "rb").read()
        final = open(os.path.join(run_dir, "epoch_003.ckpt"), "rb").read()
        assert latest == final

    def test_one_log_line_per_step(self, run_dir):
        rows = read_log_totals(os.path.join(run_dir, "train_log.txt"))
        assert len(rows) == 18  # 6 samples x 3 epochs
        text = open(os.path.join(run_dir, "train_log.txt")).read()
        assert text.count("lr=") == 18
        assert "depth=" in text and "pose=" in text

    def test_loss_decreases_across_epochs(self, run_dir):
        rows = read_log_totals(os.path.join(run_dir, "train_log.txt"))
        by_epoch = {}
        for epoch, _, total in rows:
            by_epoch.setdefault(epoch, []).append(total)
        means = [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]
        assert means[-1] < means[0]

    def test_supervised_needs_ground_truth(self, nogt_dir, tmp_path):
        result = run(["train", "--dataset", nogt_dir, "--out", str(tmp_path / "r"),
                      "--epochs", "1"] + TRAIN_ARGS)
        assert result.exit_code == 2
        assert "s00000" in result.output

    def test_self_mode_needs_no_ground_truth(self, nogt_dir, tmp_path):
        out = str(tmp_path / "r")
        result = run_ok(["train", "--dataset", nogt_dir, "--out", out, "--mode",
                         "self", "--epochs", "1", "--limit", "2"] + MODEL_ARGS
                        + ["--seed", "0"])
        assert os.path.exists(os.path.join(out, "latest.ckpt"))
        assert "photo=" in result.output and "smooth=" in result.output

    def test_resume_matches_uninterrupted_run(self, ds_dir, tmp_path):
        full = str(tmp_path / "full")
        split = str(tmp_path / "split")
        run_ok(["train", "--dataset", ds_dir, "--out", full, "--epochs", "2"]
               + TRAIN_ARGS)
        run_ok(["train", "--dataset", ds_dir, "--out", split, "--epochs", "1"]
               + TRAIN_ARGS)
        run_ok(["train", "--dataset", ds_dir, "--out", split, "--epochs", "2",
                "--resume", os.path.join(split, "latest.ckpt")] + TRAIN_ARGS)
        want = [(s, t) for e, s, t in read_log_totals(os.path.join(full, "train_log.txt"))
                if e == 1]
        got = [(s, t) for e, s, t in read_log_totals(os.path.join(split, "train_log.txt"))
               if e == 1]
        assert len(want) == 6
        assert [s for s, _ in got] == [s for s, _ in want]
        for (_, a), (_, b) in zip(want, got):
            assert abs(a - b) <= 1e-5

    def test_nonfinite_parameters_abort_with_step(self, run_dir, ds_dir, tmp_path):
        ckpt = load_checkpoint(os.path.join(run_dir, "latest.ckpt"))
        params = [Parameter(name, arr) for name, arr in ckpt.params.items()]
        params[3].tensor.data[...] = np.inf
        meta = dict(ckpt.meta)
        meta["train.epoch"] = "0"
        meta["train.step"] = "0"
        poisoned = str(tmp_path / "poisoned.ckpt")
        save_checkpoint(poisoned, params, ckpt.adam, meta)
        result = run(["train", "--dataset", ds_dir, "--out", str(tmp_path / "r"),
                      "--epochs", "1", "--resume", poisoned] + TRAIN_ARGS)
        assert result.exit_code == 4
        assert "step 1" in result.output


class TestInfer:
    def test_output_layout(self, pred_dir):
        for sub in ("depth", "color", "poses", "trajectory"):
            files = os.listdir(os.path.join(pred_dir, sub))
            assert len(files) == 8, (sub, files)
        index = open(os.path.join(pred_dir, "predictions.txt")).read()
        assert index.count("s000") >= 8
        assert os.path.exists(os.path.join(pred_dir, "run_config.ini"))

    def test_depth_file_decodes_to_memory_result(self, pred_dir, run_dir, ds_dir):
        ckpt = load_checkpoint(os.path.join(run_dir, "latest.ckpt"))
        model = SfmNetwork(ModelConfig.from_meta(ckpt.meta))
        restore_parameters(model.params, ckpt)
        sample = load_sequence(ds_dir)[0]
        cfg = OptimizeConfig(stages=2, updates_per_stage=2)
        result = run_on_sample(model, sample, cfg, record=False)
        with T.no_grad():
            up = T.bilinear_upsample(T.constant(result.depth.data), 8,
                                     out_hw=sample.reference.shape[1:])
        stored = read_depth(os.path.join(pred_dir, "depth", f"{sample.sample_id}.png"))
        assert np.abs(stored - up.data).max() <= 1.0 / 256.0

    def test_iters_zero_is_initialization_only(self, run_dir, ds_dir, tmp_path):
        out = str(tmp_path / "p")
        run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                "--data", ds_dir, "--out", out, "--iters", "0", "--limit", "1"])
        lines = open(os.path.join(out, "trajectory", "s00000.txt")).read().splitlines()
        assert len(lines) == 2  # header + init entry
        assert lines[1].split()[1] == "init"

    def test_partial_stage_iters_rejected(self, run_dir, ds_dir, tmp_path):
        result = run(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                      "--data", ds_dir, "--out", str(tmp_path / "p"), "--iters", "3"])
        assert result.exit_code == 2
        assert "multiple" in result.output and "n=2" in result.output

    def test_too_many_views_rejected(self, run_dir, ds_dir, tmp_path):
        result = run(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                      "--data", ds_dir, "--out", str(tmp_path / "p"), "--views", "5"])
        assert result.exit_code == 2
        assert "views" in result.output

    def test_single_view_runs(self, run_dir, ds_dir, tmp_path):
        out = str(tmp_path / "p")
        run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                "--data", ds_dir, "--out", out, "--views", "1", "--limit", "1"])
        lines = [l for l in open(os.path.join(out, "poses", "s00000.txt"))
                 if not l.startswith("#")]
        assert len(lines) == 1

    def test_reruns_are_bit_identical(self, pred_dir, run_dir, ds_dir, tmp_path):
        out = str(tmp_path / "p")
        run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                "--data", ds_dir, "--out", out, "--limit", "1"])
        a = open(os.path.join(out, "depth", "s00000.png"), "rb").read()
        b = open(os.path.join(pred_dir, "depth", "s00000.png"), "rb").read()
        assert a == b

    def test_joint_and_no_cost_overrides(self, run_dir, ds_dir, tmp_path):
        out = str(tmp_path / "p")
        run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                "--data", ds_dir, "--out", out, "--limit", "1",
                "--opt-mode", "joint", "--use-cost", "false"])
        resolved = open(os.path.join(out, "run_config.ini")).read()
        assert "opt_mode = joint" in resolved
        assert "use_cost = false" in resolved
        trajectory = open(os.path.join(out, "trajectory", "s00000.txt")).read()
        assert " joint " in trajectory


class TestEval:
    def test_dataset_against_itself_is_perfect(self, ds_dir, tmp_path):
        out = str(tmp_path / "m")
        result = run_ok(["eval", "--pred", ds_dir, "--gt", ds_dir, "--out", out])
        assert re.search(r"abs_rel\s+0\.000000", result.output)
        assert re.search(r"delta1\s+1\.000000", result.output)
        assert re.search(r"rot_deg\s+0\.000000", result.output)
        assert os.path.exists(os.path.join(out, "metrics.txt"))

    def test_predictions_score_against_gt(self, pred_dir, ds_dir, tmp_path):
        out = str(tmp_path / "m")
        result = run_ok(["eval", "--pred", pred_dir, "--gt", ds_dir, "--out", out])
        assert "aggregate depth metrics" in result.output
        assert "aggregate pose metrics" in result.output
        text = open(os.path.join(out, "metrics.txt")).read()
        assert text.count("s000") >= 16  # per-sample rows for both sections

    def test_id_mismatch_lists_missing(self, run_dir, ds_dir, tmp_path):
        partial = str(tmp_path / "partial")
        run_ok(["infer", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                "--data", ds_dir, "--out", partial, "--limit", "2"])
        result = run(["eval", "--pred", partial, "--gt", ds_dir])
        assert result.exit_code == 2
        assert "s00002" in result.output and "s00007" in result.output

    def test_median_scale_fixes_uniform_scaling(self, ds_dir, tmp_path):
        scaled = str(tmp_path / "scaled" / "depth")
        os.makedirs(scaled)
        for s in load_sequence(ds_dir):
            write_depth(os.path.join(scaled, f"{s.sample_id}.png"), s.gt_depth * 2.0)
        base = ["eval", "--pred", str(tmp_path / "scaled"), "--gt", ds_dir,
                "--out", str(tmp_path / "m")]
        plain = run_ok(base)
        assert re.search(r"abs_rel\s+1\.000000", plain.output)
        fixed = run_ok(base + ["--median-scale"])
        assert re.search(r"abs_rel\s+0\.000000", fixed.output)


class TestBench:
    def test_table_reports_scaling(self, run_dir, ds_dir, tmp_path):
        out = str(tmp_path / "b")
        result = run_ok(["bench", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                         "--data", ds_dir, "--out", out, "--iters", "0,2,4",
                         "--runs", "5", "--limit", "2"])
        table = open(os.path.join(out, "bench.txt")).read()
        assert table.strip() in result.output
        rows = [line.split() for line in table.splitlines()[1:]]
        assert [r[0] for r in rows] == ["0", "2", "4"]
        times = [float(r[1]) for r in rows]
        rels = [float(r[3]) for r in rows]
        assert times[2] > times[0]  # more iterations cost more wall time
        assert all(np.isfinite(rels)) and all(rel > 0 for rel in rels)

    def test_too_few_runs_rejected(self, run_dir, ds_dir, tmp_path):
        result = run(["bench", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                      "--data", ds_dir, "--out", str(tmp_path / "b"),
                      "--iters", "0", "--runs", "3"])
        assert result.exit_code == 2

    def test_partial_stage_iters_rejected(self, run_dir, ds_dir, tmp_path):
        result = run(["bench", "--checkpoint", os.path.join(run_dir, "latest.ckpt"),
                      "--data", ds_dir, "--out", str(tmp_path / "b"),
                      "--iters", "0,3", "--runs", "5", "--limit", "1"])
        assert result.exit_code == 2

import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from PIL import Image

from orchestration import cli
from orchestration.commands import (
    cmd_eval,
    cmd_predict,
    cmd_prepare,
    cmd_train,
    gradient_suite,
    metric_oracle_suite,
    total_loss_gradient_errors,
)
from orchestration.manifest import read_manifest
from schema.config import load_run_config
from schema.errors import FingerprintMismatchError, LabelError, LatencyBudgetError, MissingPathError
from training.trainer import TrainingSession


RES = 32


def synthetic_config(out_dir, **overrides):
    base = {
        "out_dir": str(out_dir),
        "data.dataset": "synthetic",
        "data.synthetic_count": 12,
        "train.resolution": RES,
        "train.epochs": 3,
        "train.pretrain_epochs": 1,
        "train.batch_size": 6,
        "train.s_steps_per_d_step": 1,
        "train.lr": 1e-3,
        "train.checkpoint_every": 1,
        "train.deterministic": True,
        "eval.bootstrap_resamples": 100,
    }
    base.update(overrides)
    return load_run_config(overrides=base)


@pytest.fixture
def prepared(tmp_path):
    config = synthetic_config(tmp_path)
    cmd_prepare(config)
    return config


# -----------------------------
# prepare
# -----------------------------

def test_prepare_writes_split_and_reports(tmp_path):
    config = synthetic_config(tmp_path)

    summary = cmd_prepare(config)

    assert (summary["development"], summary["evaluation"], summary["failed"]) == (11, 1, 0)
    assert Path(summary["load_report"]).exists()
    assert read_manifest(tmp_path, Path(summary["manifest"]).name).command == "prepare"
    before = Path(summary["split_file"]).read_bytes()
    cmd_prepare(config)
    assert Path(summary["split_file"]).read_bytes() == before


def test_prepare_missing_dataset_names_directories(tmp_path, monkeypatch):
    root = tmp_path / "data"
    monkeypatch.setenv("SCAN_DATA_ROOT", str(root))
    (root / "montgomery" / "CXR_png").mkdir(parents=True)
    config = load_run_config(overrides={"out_dir": str(tmp_path / "runs"), "data.dataset": "montgomery"})

    with pytest.raises(MissingPathError, match="leftMask"):
        cmd_prepare(config)


# -----------------------------
# train
# -----------------------------

def test_fcn_only_run_has_no_critic_checkpoints(prepared):
    config = synthetic_config(prepared.out_dir, **{"train.mode": "fcn_only"})

    result = cmd_train(config)

    run_dir = Path(result["run_dir"])
    assert "critic" not in result
    assert list(run_dir.rglob("critic_*")) == []
    assert (run_dir / "checkpoints" / "segmentor_epoch0003.ckpt").exists()
    assert result["epochs"] == 3


def test_scan_run_records_lambda_and_summaries(prepared):
    result = cmd_train(prepared)

    run_dir = Path(result["run_dir"])
    manifest = read_manifest(run_dir)
    assert manifest.config["train"]["lam"] == 0.001
    assert manifest.command == "train"
    assert Path(result["critic"]).exists()
    assert Path(result["epoch_summary"]).exists()
    assert not (run_dir / ".lock").exists()


def test_interrupted_run_resumes_to_identical_weights(tmp_path, monkeypatch):
    reference = synthetic_config(tmp_path / "a")
    cmd_prepare(reference)
    expected = Path(cmd_train(reference)["segmentor"]).read_bytes()

    config = synthetic_config(tmp_path / "b")
    cmd_prepare(config)
    original = TrainingSession.run_epoch

    def crash_on_third_epoch(self, samples):
        if self.epoch == 2:
            raise OSError("simulated crash")
        return original(self, samples)

    monkeypatch.setattr(TrainingSession, "run_epoch", crash_on_third_epoch)
    with pytest.raises(OSError, match="simulated"):
        cmd_train(config)
    monkeypatch.setattr(TrainingSession, "run_epoch", original)

    result = cmd_train(config)

    assert result["resumed"] is True
    assert Path(result["segmentor"]).read_bytes() == expected


def test_eval_refuses_checkpoint_of_other_architecture(prepared):
    checkpoint = cmd_train(prepared)["segmentor"]
    wide = synthetic_config(prepared.out_dir, **{"train.resolution": 64})

    with pytest.raises(FingerprintMismatchError) as err:
        cmd_eval(wide, checkpoint=checkpoint)

    assert err.value.expected != err.value.actual


# -----------------------------
# eval
# -----------------------------

def test_eval_writes_reports_with_all_rows(prepared):
    checkpoint = cmd_train(prepared)["segmentor"]

    result = cmd_eval(prepared, checkpoint)

    assert result["rows"] == ["Left Lung", "Right Lung", "Both Lungs", "Heart"]
    assert result["samples"] == 1
    assert Path(result["table"]).exists() and Path(result["latency"]).exists()
    latency = json.loads(Path(result["latency"]).read_text())
    assert latency["summary"]["images"] == 1


def test_eval_reports_metric_means_of_per_sample_table(prepared):
    checkpoint = cmd_train(prepared)["segmentor"]

    result = cmd_eval(prepared, checkpoint, eval_set="full")

    per_sample = pd.read_parquet(result["per_sample"])
    scored = sorted(c for c in per_sample.columns if c.endswith(("_iou", "_dice")))
    assert sorted(result["metric_means"]) == scored
    for column in scored:
        assert result["metric_means"][column] == pytest.approx(per_sample[column].mean())


def test_eval_full_dataset_and_repeatable_reports(prepared):
    checkpoint = cmd_train(prepared)["segmentor"]

    first = cmd_eval(prepared, checkpoint, eval_set="full")
    second = cmd_eval(prepared, checkpoint, eval_set="full")

    assert first["samples"] == 12
    assert Path(first["table"]).read_bytes() == Path(second["table"]).read_bytes()
    assert Path(first["key_values"]).read_bytes() == Path(second["key_values"]).read_bytes()


def test_eval_split_dataset_mismatch(prepared, tmp_path):
    checkpoint = cmd_train(prepared)["segmentor"]
    split_file = next(Path(prepared.out_dir).glob("split_synthetic_*.json"))
    other = synthetic_config(prepared.out_dir, **{"data.dataset": "jsrt", "data.split_file": str(split_file)})

    with pytest.raises(LabelError, match="synthetic"):
        cmd_eval(other, checkpoint)


def test_latency_budget_fails_eval(prepared):
    checkpoint = cmd_train(prepared)["segmentor"]
    strict = synthetic_config(prepared.out_dir, **{"eval.latency_budget_s": 1e-9})

    with pytest.raises(LatencyBudgetError):
        cmd_eval(strict, checkpoint)


# -----------------------------
# predict
# -----------------------------

def test_predict_writes_binary_masks_and_reports_bad_files(prepared, tmp_path):
    checkpoint = cmd_train(prepared)["segmentor"]
    good = tmp_path / "inputs" / "cxr.png"
    good.parent.mkdir()
    Image.fromarray(np.random.default_rng(0).integers(0, 256, (50, 40), dtype=np.uint8)).save(good)
    bad = tmp_path / "inputs" / "broken.png"
    bad.write_bytes(b"not an image")
    config = synthetic_config(prepared.out_dir, **{"eval.overlay": True})

    first = cmd_predict(config, [str(good), str(bad)], checkpoint)
    second = cmd_predict(config, [str(good)], checkpoint)

    assert list(first["failures"]) == [str(bad)]
    files = first["written"][str(good)]
    assert set(files) == {"left_lung", "right_lung", "heart", "overlay"}
    for organ in ("left_lung", "right_lung", "heart"):
        pixels = np.asarray(Image.open(files[organ]))
        assert pixels.shape == (RES, RES)
        assert set(np.unique(pixels)) <= {0, 255}
        assert Path(files[organ]).read_bytes() == Path(second["written"][str(good)][organ]).read_bytes()


def test_predict_without_postprocess(prepared, tmp_path):
    checkpoint = cmd_train(prepared)["segmentor"]
    good = tmp_path / "cxr.png"
    Image.fromarray(np.full((RES, RES), 128, dtype=np.uint8)).save(good)
    raw = synthetic_config(prepared.out_dir, **{"eval.postprocess": False})

    assert cmd_predict(raw, [str(good)], checkpoint)["failures"] == {}


# -----------------------------
# selftest and cli
# -----------------------------

def test_selftest_suites_pass():
    errors = gradient_suite(resolution=32, probes=10)

    assert set(errors) == {"segmentor", "critic", "segmentor_total", "segmentor_total_float32"}
    assert max(v for k, v in errors.items() if not k.endswith("float32")) < 1e-3
    assert errors["segmentor_total_float32"] < 1e-2
    assert metric_oracle_suite(trials=500) == 0


def test_total_segmentor_objective_gradients_64bit():
    errors = total_loss_gradient_errors(resolution=64, probes=20, seed=1)

    assert len(errors) == 20
    assert max(errors.values()) < 1e-3, errors


def test_total_segmentor_objective_gradients_32bit():
    errors = total_loss_gradient_errors(resolution=64, probes=20, seed=1, dtype=np.float32)

    assert max(errors.values()) < 1e-2, errors


def test_cli_exit_status(tmp_path):
    args = ["--dataset", "synthetic", "--resolution", "32", "--out-dir", str(tmp_path)]

    assert cli.run(["prepare", *args]) == 0
    assert cli.run(["train", *args, "--dataset", "jsrt"]) == 1
    assert cli.run(["eval", *args, "--checkpoint", str(tmp_path / "absent.ckpt")]) == 1


def test_cli_flags_override_config():
    args = cli.build_parser().parse_args(
        ["train", "--lambda", "0.01", "--mode", "fcn_only", "--no-postprocess", "--batch-size", "4"])
    overrides = cli.overrides_from(args)

    config = load_run_config(overrides=overrides)

    assert (config.train.lam, config.train.mode, config.train.batch_size) == (0.01, "fcn_only", 4)
    assert config.eval.postprocess is False
    assert config.eval.overlay is False

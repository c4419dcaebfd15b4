"""
commands.py

Purpose:
--------
One function per CLI subcommand. Each writes its manifest before any other
artifact, holds the run lock while it works, and raises a domain error on
failure; the CLI turns errors into the exit status.

- cmd_prepare   scan, split, assemble and profile a dataset
- cmd_train     pretrain then (mode = scan) adversarial training, resumable
- cmd_eval      metric report for a checkpoint on a split or a full dataset
- cmd_predict   mask files (and overlays) for loose images
- cmd_selftest  gradient checks and the metric oracle
"""

import logging
from dataclasses import replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from autodiff import ops
from autodiff.gradcheck import ABS_FLOOR, FLOAT32_FLOOR, NETWORK_STEP, check_parameter_gradients
from autodiff.tensor import DEFAULT_DTYPE, GRADCHECK_DTYPE
from evaluation.metrics import dice, iou
from evaluation.overlays import write_masks, write_overlay
from evaluation.postprocess import predicted_masks
from evaluation.report import evaluate
from networks.critic import build_critic, critic_input
from networks.segmentor import build_segmentor, forward_segment
from orchestration.graph import build_graph
from orchestration.manifest import (
    RunLock,
    build_manifest,
    find_resumable,
    new_run_dir,
    write_manifest,
)
from pipelines.ingestion import load_image_file
from pipelines.run_pipeline import default_split_path, load_samples, prepare_dataset, resolve_split, run_step
from pipelines.standardization import standardize_image
from pipelines.synthetic import make_synthetic_sample, synthetic_samples
from schema.config import RunConfig, TrainConfig
from schema.errors import ConfigError, LabelError, LatencyBudgetError
from storage.checkpoints import load_checkpoint
from storage.run_store import metric_summary
from training.objectives import pixel_loss_from_logits
from training.trainer import TrainingSession, stack_batch

logger = logging.getLogger(__name__)


EVAL_SETS = ("evaluation", "validation", "development", "full")


def _workers(config: RunConfig, workers: int) -> int:
    return 1 if config.train.deterministic else max(1, workers)


def _load_segmentor(config: RunConfig, checkpoint: Optional[str]):
    """Segmentor for eval / predict; defaults to the final weights of the latest matching train run."""
    if checkpoint is None:
        run_dir = find_resumable(config.out_dir, config.config_hash())
        if run_dir is None or not (run_dir / "segmentor_final.ckpt").exists():
            raise ConfigError("no --checkpoint given and no finished training run matches this configuration")
        checkpoint = run_dir / "segmentor_final.ckpt"
    S = build_segmentor(config.train.seed, config.train.resolution)
    load_checkpoint(S, Path(checkpoint))
    logger.info("Loaded segmentor from %s", checkpoint)
    return S


# -----------------------------
# prepare
# -----------------------------

def cmd_prepare(config: RunConfig, workers: int = 1, argv: Optional[List[str]] = None) -> Dict:
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    split_path = default_split_path(config.data, out_dir)

    with RunLock(out_dir):
        manifest = build_manifest("prepare", config, out_dir, str(split_path), argv)
        manifest_path = out_dir / f"{split_path.stem}.manifest.json"
        manifest_path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        summary = prepare_dataset(config, out_dir, _workers(config, workers))

    logger.info("Prepared %s: development %d, evaluation %d, failed %d",
                config.data.dataset, summary["development"], summary["evaluation"], summary["failed"])
    return {**summary, "manifest": str(manifest_path)}


# -----------------------------
# train
# -----------------------------

def cmd_train(config: RunConfig, fresh: bool = False, workers: int = 1,
              argv: Optional[List[str]] = None) -> Dict:
    out_dir = Path(config.out_dir)
    config_hash = config.config_hash()
    run_dir = None if fresh else find_resumable(out_dir, config_hash)
    if run_dir is None:
        run_dir = new_run_dir(out_dir, config_hash)
    logger.info("Run directory: %s", run_dir)

    with RunLock(run_dir):
        split_file = str(default_split_path(config.data, out_dir))
        write_manifest(build_manifest("train", config, run_dir, split_file, argv), run_dir)
        result = build_graph().invoke({
            "config": config,
            "run_dir": str(run_dir),
            "fresh": fresh,
            "workers": _workers(config, workers),
            "status": "running",
        })

    if result.get("status") == "failed":
        raise result["exception"]

    session = result["session"]
    return {
        "run_dir": str(run_dir),
        "resumed": result.get("resumed", False),
        "epochs": session.epoch,
        "steps": session.step,
        **result.get("artifacts", {}),
    }


# -----------------------------
# eval
# -----------------------------

def eval_ids(config: RunConfig, eval_set: str) -> Optional[List[str]]:
    """Ids of the requested split list; None means every sample of the dataset."""
    if eval_set not in EVAL_SETS:
        raise ConfigError(f"eval set must be one of {EVAL_SETS}, got {eval_set!r}")
    if eval_set == "full":
        return None
    split = resolve_split(config.data, config.out_dir)
    if split.dataset != config.data.dataset:
        raise LabelError(f"split file was made for dataset {split.dataset!r}, not {config.data.dataset!r}")
    return getattr(split, eval_set)


def cmd_eval(config: RunConfig, checkpoint: Optional[str] = None, eval_set: str = "evaluation",
             workers: int = 1, argv: Optional[List[str]] = None) -> Dict:
    ids = eval_ids(config, eval_set)
    S = _load_segmentor(config, checkpoint)

    run_dir = new_run_dir(config.out_dir, config.config_hash())
    with RunLock(run_dir):
        split_file = None if ids is None else str(default_split_path(config.data, config.out_dir))
        write_manifest(build_manifest("eval", config, run_dir, split_file, argv), run_dir)

        samples, reports = run_step("LOAD EVALUATION SAMPLES", lambda: load_samples(
            config.data, ids, config.train.resolution, _workers(config, workers)))
        report = run_step("EVALUATION", lambda: evaluate(
            S, samples, config.eval.postprocess, config.eval.bootstrap_resamples, config.eval.bootstrap_seed))
        prefix = f"metrics_{config.data.dataset}_{eval_set}"
        paths = report.write(run_dir, prefix)
        summary = metric_summary(paths["per_sample"])

        if config.eval.overlay:
            for sample in samples:
                masks = predicted_masks(forward_segment(S, sample.image), config.eval.postprocess)
                write_overlay(sample.image, masks, run_dir / "overlays", sample.id)

    print(report.to_table())
    for row in summary.itertuples():
        logger.info("%-16s mean %.4f  min %.4f  std %.4f  over %d images",
                    row.metric, row.mean, row.min, row.std, row.images)
    latency = report.latency_summary()
    logger.info("Mean prediction time %.3fs over %d images", latency["mean_s"], latency["images"])
    if latency["mean_s"] > config.eval.latency_budget_s:
        raise LatencyBudgetError(latency["mean_s"], config.eval.latency_budget_s)

    return {
        "run_dir": str(run_dir),
        "samples": report.sample_count,
        "failed": sum(len(r.failures) for r in reports),
        "rows": report.row_names,
        "metric_means": dict(zip(summary["metric"], summary["mean"].astype(float))),
        **{k: str(v) for k, v in paths.items()},
    }


# -----------------------------
# predict
# -----------------------------

def cmd_predict(config: RunConfig, image_paths: Sequence[str], checkpoint: Optional[str] = None,
                argv: Optional[List[str]] = None) -> Dict:
    """Per-file failures are collected, not raised; the caller exits nonzero when any occurred."""
    S = _load_segmentor(config, checkpoint)
    run_dir = new_run_dir(config.out_dir, config.config_hash())
    out = run_dir / "predictions"
    written, failures = {}, {}

    with RunLock(run_dir):
        write_manifest(build_manifest("predict", config, run_dir, None, argv), run_dir)
        for path in image_paths:
            sample_id = Path(path).stem
            try:
                image = standardize_image(load_image_file(path), config.train.resolution)
                masks = predicted_masks(forward_segment(S, image), config.eval.postprocess)
            except (ValueError, OSError) as e:
                logger.error("[FAILED] %s: %s", path, e)
                failures[str(path)] = str(e)
                continue
            files = write_masks(masks, out, sample_id)
            if config.eval.overlay:
                files["overlay"] = write_overlay(image, masks, out, sample_id)
            written[str(path)] = {k: str(v) for k, v in files.items()}

    logger.info("Predicted %d images, %d failed", len(written), len(failures))
    return {"run_dir": str(run_dir), "written": written, "failures": failures}


# -----------------------------
# selftest
# -----------------------------

def gradient_suite(resolution: int = 64, probes: int = 20, seed: int = 0) -> Dict[str, float]:
    """
    Worst relative finite-difference error of each network in 64-bit mode,
    and of the full segmentor objective (pixel plus adversarial term) in
    64-bit and 32-bit mode.
    """
    rng = np.random.default_rng(seed)
    samples = synthetic_samples(2, resolution, seed=seed)
    x = np.stack([s.image for s in samples]).astype(GRADCHECK_DTYPE)
    y = np.stack([s.mask for s in samples])
    heart = np.array([True, True])

    S = build_segmentor(seed, resolution).astype(GRADCHECK_DTYPE)

    def s_loss():
        z = S.logits(x, mode="train", update_stats=False)
        return float(np.sum(pixel_loss_from_logits(z, y, heart)[0]))

    S.zero_grad()
    z = S.logits(x, mode="train", record=True, update_stats=False)
    S.backward(pixel_loss_from_logits(z, y, heart)[1])
    S.clear()
    s_errors = check_parameter_gradients(s_loss, S.param_arrays(), S.grads(), probes, rng, step=NETWORK_STEP)

    D = build_critic(seed + 1, resolution=resolution).astype(GRADCHECK_DTYPE)
    inputs = np.concatenate([y.astype(GRADCHECK_DTYPE), rng.dirichlet(np.ones(4), size=(2, resolution, resolution))])
    t = np.array([1.0, 1.0, 0.0, 0.0])

    def d_loss():
        z = D.logits(inputs, mode="train", update_stats=False)
        return float(np.sum(np.logaddexp(0, z) - t * z))

    D.zero_grad()
    z = D.logits(inputs, mode="train", record=True, update_stats=False)
    D.backward(1.0 / (1.0 + np.exp(-z)) - t)
    D.clear()
    d_errors = check_parameter_gradients(d_loss, D.param_arrays(), D.grads(), probes, rng, step=NETWORK_STEP)

    total = total_loss_gradient_errors(resolution, probes, seed)
    total_32 = total_loss_gradient_errors(resolution, probes, seed, dtype=DEFAULT_DTYPE)

    return {
        "segmentor": max(s_errors.values()),
        "critic": max(d_errors.values()),
        "segmentor_total": max(total.values()),
        "segmentor_total_float32": max(total_32.values()),
    }


def total_loss_gradient_errors(resolution: int = 64, probes: int = 20, seed: int = 0, lam: float = 0.5,
                               dtype=GRADCHECK_DTYPE) -> Dict[str, float]:
    """
    Relative errors of the segmentor parameter gradients of
    sum J_s + lam * sum J_d(D(fake), 1), as accumulated by a training step.

    The batch holds one heart-annotated and one unannotated sample. Analytic
    gradients are taken at `dtype`; finite differences always run on an
    identically built 64-bit copy.
    """
    samples = [make_synthetic_sample(0, resolution, seed),
               make_synthetic_sample(1, resolution, seed, heart_annotated=False)]
    batch = stack_batch(samples)
    config = TrainConfig(mode="scan", lam=lam, resolution=resolution, epochs=1, pretrain_epochs=0, seed=seed)

    def session(dt):
        S = build_segmentor(seed, resolution).astype(dt)
        D = build_critic(seed + 1, resolution=resolution).astype(dt)
        return TrainingSession(S, D, config)

    analytic = session(dtype)
    analytic.segmentor_gradients(replace(batch, images=batch.images.astype(dtype)), lam, update_stats=False)
    reference = analytic if np.dtype(dtype) == GRADCHECK_DTYPE else session(GRADCHECK_DTYPE)
    x = batch.images.astype(GRADCHECK_DTYPE)
    n = len(batch)

    def loss():
        z = reference.S.logits(x, mode="train", update_stats=False)
        js = np.sum(pixel_loss_from_logits(z, batch.masks, batch.heart)[0])
        p = ops.softmax_channels(z)
        inputs = np.concatenate([critic_input(batch.masks, None, batch.heart), critic_input(p, None, batch.heart)])
        zd = reference.D.logits(inputs.astype(GRADCHECK_DTYPE), mode="train", update_stats=False)
        return float(js + lam * np.sum(np.logaddexp(0.0, -zd[n:])))

    floor = ABS_FLOOR if np.dtype(dtype) == GRADCHECK_DTYPE else FLOAT32_FLOOR
    return check_parameter_gradients(loss, reference.S.param_arrays(), analytic.S.grads(), probes,
                                     np.random.default_rng(seed), step=NETWORK_STEP, floor=floor)


def metric_oracle_suite(trials: int = 10_000, size: int = 16, seed: int = 0) -> int:
    """Number of random mask pairs on which iou / dice disagree with plain pixel counting."""
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(trials):
        P = rng.random((size, size)) < rng.random()
        G = rng.random((size, size)) < rng.random()
        tp = int(np.sum(P & G))
        union = int(np.sum(P | G))
        expected_iou = tp / union if union else 1.0
        expected_dice = 2 * tp / (int(P.sum()) + int(G.sum())) if union else 1.0
        j = iou(P, G)
        if j != expected_iou or dice(P, G) != expected_dice or abs(dice(P, G) - 2 * j / (1 + j)) > 1e-9:
            mismatches += 1
    return mismatches


def cmd_selftest(tolerance: float = 1e-3, float32_tolerance: float = 1e-2, trials: int = 10_000) -> Dict:
    gradients = run_step("GRADIENT CHECK", gradient_suite)
    mismatches = run_step("METRIC ORACLE", lambda: metric_oracle_suite(trials))
    failing = [name for name, err in gradients.items()
               if err >= (float32_tolerance if name.endswith("float32") else tolerance)]
    passed = not failing and mismatches == 0
    for name, err in gradients.items():
        logger.info("%s worst relative gradient error %.2e", name, err)
    logger.info("metric oracle mismatches: %d / %d", mismatches, trials)
    if not passed:
        logger.error("[FAILED] selftest %s", failing)
    return {"gradients": gradients, "oracle_mismatches": mismatches, "passed": passed}

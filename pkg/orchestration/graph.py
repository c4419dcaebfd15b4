"""
graph.py

Purpose:
--------
LangGraph orchestration of one training run.

Flow:
Load Data
   ↓
Build / Resume Models
   ↓
Pretrain (pixel loss only)
   ↓
(mode = scan)        (mode = fcn_only)
Adversarial Phase    Pixel Phase
   ↓
Finalize

Any node that fails sets status = failed and the flow ends there; the
caller re-raises the stored exception.
"""

import logging
from pathlib import Path

from langgraph.graph import END, StateGraph

from networks.critic import build_critic
from networks.segmentor import build_segmentor
from orchestration.state import RunState
from pipelines.run_pipeline import default_split_path, load_samples, resolve_split, run_step
from storage.checkpoints import RunCheckpointer, save_checkpoint
from storage.run_store import epoch_summary
from training.train_log import TrainLog
from training.trainer import TrainingSession

logger = logging.getLogger(__name__)


TRAIN_LOG = "train_log.jsonl"
EVENTS_LOG = "events.jsonl"
CHECKPOINT_DIR = "checkpoints"


def _failed(e: Exception) -> RunState:
    return {"status": "failed", "error": f"{type(e).__name__}: {e}", "exception": e}


# -----------------------------
# Nodes
# -----------------------------

def load_data_node(state: RunState) -> RunState:
    config = state["config"]
    try:
        split = run_step("LOAD SPLIT", lambda: resolve_split(config.data, config.out_dir))
        samples, _ = run_step("LOAD TRAINING SAMPLES", lambda: load_samples(
            config.data, split.training, config.train.resolution, state.get("workers", 1)))
    except (ValueError, OSError) as e:
        return _failed(e)
    logger.info("Training on %d samples (%d held out for validation)", len(samples), len(split.validation))
    return {
        "split_file": str(default_split_path(config.data, config.out_dir)),
        "samples": samples,
        "status": "running",
    }


def build_node(state: RunState) -> RunState:
    config = state["config"]
    train = config.train
    run_dir = Path(state["run_dir"])

    S = build_segmentor(train.seed, train.resolution)
    D = build_critic(train.seed + 1, train.include_image, train.resolution) if train.mode == "scan" else None
    log = TrainLog.load(run_dir / TRAIN_LOG, run_dir / EVENTS_LOG)
    checkpointer = RunCheckpointer(run_dir / CHECKPOINT_DIR)
    session = TrainingSession(S, D, train, log=log, checkpointer=checkpointer)

    resumed = False
    try:
        if not state.get("fresh"):
            resumed = checkpointer.restore(session)
    except (ValueError, OSError) as e:
        return _failed(e)
    if not resumed and log.records:
        # records without a checkpoint to continue from
        log.truncate_after(-1)
    log.event("start", epoch=session.epoch, step=session.step, resumed=resumed)
    return {"session": session, "checkpointer": checkpointer, "resumed": resumed}


def pretrain_node(state: RunState) -> RunState:
    session = state["session"]
    try:
        run_step("PRETRAIN", lambda: session.run(state["samples"], stop_epoch=session.config.pretrain_epochs))
    except (ValueError, OSError) as e:
        return _failed(e)
    return {"status": "running"}


def adversarial_node(state: RunState) -> RunState:
    session = state["session"]
    try:
        run_step("ADVERSARIAL TRAINING", lambda: session.run(state["samples"]))
    except (ValueError, OSError) as e:
        return _failed(e)
    return {"status": "running"}


def pixel_node(state: RunState) -> RunState:
    session = state["session"]
    try:
        run_step("PIXEL-LOSS TRAINING", lambda: session.run(state["samples"]))
    except (ValueError, OSError) as e:
        return _failed(e)
    return {"status": "running"}


def finalize_node(state: RunState) -> RunState:
    session = state["session"]
    run_dir = Path(state["run_dir"])
    artifacts = {"segmentor": str(run_dir / "segmentor_final.ckpt")}
    save_checkpoint(session.S, artifacts["segmentor"])
    if session.D is not None:
        artifacts["critic"] = str(run_dir / "critic_final.ckpt")
        save_checkpoint(session.D, artifacts["critic"])

    log_path = run_dir / TRAIN_LOG
    if log_path.exists():
        summary_path = run_dir / "epoch_summary.parquet"
        epoch_summary(log_path).to_parquet(summary_path, index=False)
        artifacts["epoch_summary"] = str(summary_path)
    session.log.event("finish", epoch=session.epoch, step=session.step)
    logger.info("Training finished after %d epochs, %d steps", session.epoch, session.step)
    return {"artifacts": artifacts, "status": "completed"}


# -----------------------------
# Conditional routing
# -----------------------------

def failure_router(next_node: str):
    def route(state: RunState) -> str:
        return "end" if state.get("status") == "failed" else next_node
    return route


def phase_router(state: RunState) -> str:
    if state.get("status") == "failed":
        return "end"
    return "adversarial" if state["config"].train.mode == "scan" else "pixel"


# -----------------------------
# Build LangGraph
# -----------------------------

def build_graph():

    graph = StateGraph(RunState)

    graph.add_node("load_data", load_data_node)
    graph.add_node("build", build_node)
    graph.add_node("pretrain", pretrain_node)
    graph.add_node("adversarial", adversarial_node)
    graph.add_node("pixel", pixel_node)
    graph.add_node("finalize", finalize_node)

    graph.set_entry_point("load_data")

    graph.add_conditional_edges("load_data", failure_router("build"), {"build": "build", "end": END})
    graph.add_conditional_edges("build", failure_router("pretrain"), {"pretrain": "pretrain", "end": END})
    graph.add_conditional_edges(
        "pretrain",
        phase_router,
        {"adversarial": "adversarial", "pixel": "pixel", "end": END},
    )
    graph.add_conditional_edges("adversarial", failure_router("finalize"), {"finalize": "finalize", "end": END})
    graph.add_conditional_edges("pixel", failure_router("finalize"), {"finalize": "finalize", "end": END})
    graph.add_edge("finalize", END)

    return graph.compile()

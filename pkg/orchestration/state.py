"""
state.py

Purpose:
--------
Defines the shared state passed between the nodes of the training flow.
This is the single source of truth for the orchestration layer.
"""

from typing import Any, Dict, List, Optional, TypedDict


class RunState(TypedDict, total=False):

    # inputs
    config: Any                 # RunConfig
    run_dir: str
    fresh: bool
    workers: int

    # load_data output
    split_file: str
    samples: List[Any]          # ImageSample

    # build output
    session: Any                # TrainingSession
    checkpointer: Any           # RunCheckpointer
    resumed: bool

    # finalize output
    artifacts: Dict[str, str]

    # control flags
    status: str                 # running | failed | completed
    error: Optional[str]
    exception: Optional[BaseException]

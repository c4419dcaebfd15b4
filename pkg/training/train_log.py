"""
train_log.py

Purpose:
--------
Per-step training records, one per optimizer step, persisted as
line-delimited JSON (train_log.jsonl) next to an events file
(events.jsonl) for divergences, checkpoints and phase changes.

Pretraining records carry no adversarial fields; critic records carry
no pixel loss.
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

import pandas as pd
from pydantic import BaseModel

from schema.errors import FormatError


class StepRecord(BaseModel):
    step: int
    epoch: int
    phase: Literal["pretrain", "segmentor", "critic"]
    batch_size: int
    js: Optional[float] = None        # batch mean of J_s
    adv: Optional[float] = None       # batch mean of J_d(D(x, S(x)), 1)
    jd: Optional[float] = None        # critic objective, batch mean per sample
    wall_ms: float = 0.0

    def to_json(self) -> str:
        return json.dumps(self.model_dump(exclude_none=True), sort_keys=True)


class TrainLog:

    def __init__(self, path: Optional[Path] = None, events_path: Optional[Path] = None):
        self.path = Path(path) if path else None
        self.events_path = Path(events_path) if events_path else None
        self.records: List[StepRecord] = []
        self.events: List[Dict[str, Any]] = []

    # -----------------------------
    # Writing
    # -----------------------------

    def append(self, record: StepRecord):
        if self.records and record.step <= self.records[-1].step:
            raise ValueError(f"step index must increase: got {record.step} after {self.records[-1].step}")
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(record.to_json() + "\n")

    def event(self, kind: str, **fields):
        entry = {"event": kind, **fields}
        self.events.append(entry)
        if self.events_path:
            with open(self.events_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(entry, sort_keys=True, default=str) + "\n")

    # -----------------------------
    # Reading
    # -----------------------------

    @property
    def last_step(self) -> int:
        return self.records[-1].step if self.records else -1

    def loss_curve(self, field: str = "js", phase: Optional[str] = None) -> List[float]:
        return [getattr(r, field) for r in self.records
                if (phase is None or r.phase == phase) and getattr(r, field) is not None]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([r.model_dump() for r in self.records])

    def epoch_means(self) -> pd.DataFrame:
        """Mean js / adv / jd per (epoch, phase)."""
        df = self.to_frame()
        if df.empty:
            return df
        losses = ["js", "adv", "jd"]
        df[losses] = df[losses].apply(pd.to_numeric, errors="coerce")
        return df.groupby(["epoch", "phase"], as_index=False)[losses].mean()

    @classmethod
    def load(cls, path: Path, events_path: Optional[Path] = None) -> "TrainLog":
        """Reopen a persisted log; new records are appended to the same files."""
        log = cls(path, events_path)
        if Path(path).exists():
            with open(path, "r", encoding="utf-8") as f:
                for lineno, line in enumerate(f, 1):
                    if not line.strip():
                        continue
                    try:
                        log.records.append(StepRecord.model_validate_json(line))
                    except ValueError as e:
                        raise FormatError(f"{path}:{lineno}: malformed train log record: {e}") from e
        return log

    def truncate_after(self, step: int):
        """Drop records beyond a checkpointed step and rewrite the file (resume after a crash)."""
        self.records = [r for r in self.records if r.step <= step]
        if self.path:
            with open(self.path, "w", encoding="utf-8") as f:
                for r in self.records:
                    f.write(r.to_json() + "\n")

"""
splits.py

Purpose:
--------
Seeded development / evaluation splits, persisted as id-list files so
every later run reuses the identical split.

A validation list can be carved out of the development ids for tuning;
the remaining development ids are the training ids.
"""

import json
from pathlib import Path
from typing import List, Sequence

import numpy as np
from pydantic import BaseModel, model_validator

from schema.errors import ConfigError, FormatError, LabelError, MissingPathError


class DatasetSplit(BaseModel):
    dataset: str = ""
    seed: int = 0
    development: List[str]
    evaluation: List[str]
    validation: List[str] = []

    @model_validator(mode="after")
    def _check_disjoint(self):
        overlap = set(self.development) & set(self.evaluation)
        if overlap:
            raise ValueError(f"development and evaluation overlap on {sorted(overlap)[:5]}")
        if not set(self.validation) <= set(self.development):
            raise ValueError("validation ids must come from the development ids")
        return self

    @property
    def training(self) -> List[str]:
        held = set(self.validation)
        return [i for i in self.development if i not in held]

    @property
    def all_ids(self) -> List[str]:
        return sorted(self.development + self.evaluation)


def check_unique_ids(ids: Sequence[str]):
    seen, dupes = set(), set()
    for i in ids:
        (dupes if i in seen else seen).add(i)
    if dupes:
        raise LabelError(f"duplicate sample ids: {sorted(dupes)[:10]}")


def make_split(ids: Sequence[str], seed: int, dev_count: int, val_count: int = 0,
               dataset: str = "") -> DatasetSplit:
    check_unique_ids(ids)
    if not 0 <= dev_count < len(ids):
        raise ConfigError(f"dev_count must be in [0, {len(ids)}) for {len(ids)} samples, got {dev_count}")
    if val_count > dev_count:
        raise ConfigError(f"val_count {val_count} exceeds dev_count {dev_count}")

    order = np.random.default_rng(seed).permutation(len(ids))
    ordered = sorted(ids)
    shuffled = [ordered[i] for i in order]
    development = shuffled[:dev_count]

    return DatasetSplit(
        dataset=dataset,
        seed=seed,
        development=sorted(development),
        evaluation=sorted(shuffled[dev_count:]),
        validation=sorted(development[:val_count]),
    )


def full_split(ids: Sequence[str], dataset: str = "") -> DatasetSplit:
    """Every sample in the evaluation list (evaluation of a model trained elsewhere)."""
    check_unique_ids(ids)
    return DatasetSplit(dataset=dataset, development=[], evaluation=sorted(ids))


def save_split(split: DatasetSplit, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(split.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_split(path) -> DatasetSplit:
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"Missing split file: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return DatasetSplit.model_validate(json.load(f))
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not a split file ({e})") from e

"""
run_pipeline.py

Purpose:
--------
Single entry point to prepare a dataset for training and evaluation.

Execution order:
1. Dataset scan (directory check + ingestion audit)
2. Split (seeded development / evaluation id lists)
3. Sample assembly (decode, resize, normalize, one-hot)
4. Profiling

If any step fails, the pipeline stops and the error propagates to the
caller, which owns the exit status.
"""

import json
import logging
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import pandas as pd

from pipelines.ingestion import scan_dataset
from pipelines.profiling import run_profiling
from pipelines.splits import DatasetSplit, load_split, make_split, save_split
from pipelines.synthetic import synthetic_ids, synthetic_samples
from pipelines.transformations import ImageSample, LoadReport, assemble_samples
from schema.config import DataConfig, DatasetLayout, RunConfig, dataset_members, load_dataset_layouts
from schema.errors import ConfigError, LabelError
from storage.tensor_cache import TensorCache


logger = logging.getLogger(__name__)


def run_step(step_name, func):
    logger.info("========== %s ==========", step_name)
    try:
        result = func()
    except Exception as e:
        logger.error("[FAILED] %s: %s", step_name, e)
        raise
    logger.info("[SUCCESS] %s completed.", step_name)
    return result


# -----------------------------
# Dataset membership
# -----------------------------

def member_layouts(data: DataConfig) -> List[DatasetLayout]:
    layouts = load_dataset_layouts(data.datasets_registry)
    members = dataset_members(data.dataset)
    missing = [m for m in members if m not in layouts]
    if missing:
        raise ConfigError(f"datasets {missing} are not defined in {data.datasets_registry}")
    return [layouts[m] for m in members]


def member_ids(layout: DatasetLayout, data: DataConfig) -> List[str]:
    if layout.name == "synthetic":
        return synthetic_ids(data.synthetic_count)
    return sorted(scan_dataset(layout)["id"])


def default_split_path(data: DataConfig, out_dir) -> Path:
    if data.split_file:
        return Path(data.split_file)
    return Path(out_dir) / f"split_{data.dataset}_seed{data.split_seed}.json"


def build_split(data: DataConfig, ids_by_member: Dict[str, List[str]],
                layouts: Sequence[DatasetLayout]) -> DatasetSplit:
    """Split every member dataset with its own development size, then merge."""
    parts = []
    for layout in layouts:
        ids = ids_by_member[layout.name]
        dev_count = min(layout.dev_count, len(ids) - 1)
        if dev_count != layout.dev_count:
            logger.warning("Dataset %s has %d samples; development set reduced to %d",
                           layout.name, len(ids), dev_count)
        parts.append(make_split(ids, data.split_seed, dev_count, data.val_count, layout.name))

    if len(parts) == 1:
        return parts[0]
    merged = DatasetSplit(
        dataset=data.dataset,
        seed=data.split_seed,
        development=sorted(i for p in parts for i in p.development),
        evaluation=sorted(i for p in parts for i in p.evaluation),
        validation=sorted(i for p in parts for i in p.validation),
    )
    total = sum(len(ids_by_member[l.name]) for l in layouts)
    if len(merged.all_ids) != total:
        raise LabelError(f"sample ids collide across {[l.name for l in layouts]}")
    return merged


# -----------------------------
# Sample loading
# -----------------------------

def load_samples(data: DataConfig, ids: Optional[Sequence[str]], resolution: int,
                 workers: int = 1) -> Tuple[List[ImageSample], List[LoadReport]]:
    """
    Samples for the given ids in the given order (every sample of the
    configured dataset when ids is None).
    """
    cache = TensorCache(data.cache_dir) if data.cache_dir else None
    wanted = list(ids) if ids is not None else None
    found: Dict[str, ImageSample] = {}
    reports = []

    for layout in member_layouts(data):
        if layout.name == "synthetic":
            samples = synthetic_samples(data.synthetic_count, resolution, data.split_seed,
                                        layout.heart_annotated)
            report = LoadReport(layout.name)
            for s in samples:
                report.ok(s.id, 0, False)
        else:
            available = set(member_ids(layout, data))
            mine = sorted(available) if wanted is None else [i for i in wanted if i in available]
            samples, report = assemble_samples(layout, mine, resolution, data.skip_failed, cache, workers)
        reports.append(report)
        found.update({s.id: s for s in samples})

    if wanted is None:
        return [found[i] for i in sorted(found)], reports

    failed = {r["id"] for rep in reports for r in rep.failures}
    unknown = [i for i in wanted if i not in found and i not in failed]
    if unknown:
        raise LabelError(f"split ids not present in dataset {data.dataset}: {unknown[:10]}")
    return [found[i] for i in wanted if i in found], reports


# -----------------------------
# Prepare
# -----------------------------

def prepare_dataset(config: RunConfig, out_dir, workers: int = 1) -> Dict:
    """Scan, split, assemble and profile; returns a summary of what was written."""
    data = config.data
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def scan_step():
        found = member_layouts(data)
        return found, {l.name: member_ids(l, data) for l in found}

    layouts, ids_by_member = run_step("DATASET SCAN", scan_step)
    for name, ids in ids_by_member.items():
        logger.info("%s: %d images", name, len(ids))

    split_path = default_split_path(data, out_dir)

    def split_step():
        split = build_split(data, ids_by_member, layouts)
        save_split(split, split_path)
        return split

    split = run_step("SPLIT", split_step)
    logger.info("Split sizes: development %d, evaluation %d, validation %d",
                len(split.development), len(split.evaluation), len(split.validation))

    samples, reports = run_step(
        "SAMPLE ASSEMBLY",
        lambda: load_samples(data, split.all_ids, config.train.resolution, workers),
    )

    report_frames = [r.to_frame().assign(dataset=r.dataset) for r in reports]
    report_path = out_dir / "load_report.json"
    with open(report_path, "w") as f:
        json.dump({"reports": [r.summary() for r in reports]}, f, indent=4, sort_keys=True)
    if report_frames:
        pd.concat(report_frames, ignore_index=True).to_parquet(out_dir / "load_report.parquet", index=False)

    profile_path = run_step("PROFILING", lambda: run_profiling(samples, data.dataset, out_dir))

    return {
        "split_file": str(split_path),
        "development": len(split.development),
        "evaluation": len(split.evaluation),
        "validation": len(split.validation),
        "loaded": len(samples),
        "failed": sum(len(r.failures) for r in reports),
        "load_report": str(report_path),
        "profile": str(profile_path),
    }


def resolve_split(data: DataConfig, out_dir) -> DatasetSplit:
    """Load the prepared split; a run must never re-derive it silently."""
    return load_split(default_split_path(data, out_dir))

"""
transformations.py

Purpose:
--------
Turn raw dataset files into canonical ImageSamples.

Each sample is:
- image: [R, R, 1] float32, resized then normalized
- mask:  [R, R, 4] float32 one-hot (left lung, right lung, heart, background)
- heart_annotated: False for datasets without heart labels (heart channel all zero)

Per-sample failures are collected into a load report; the run aborts
unless skip_failed is set.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from pipelines.ingestion import load_image, load_mask_image, scan_dataset
from pipelines.standardization import (
    check_one_hot,
    normalize_per_image,
    one_hot_from_masks,
    resize_bilinear,
    resize_mask,
)
from schema.config import CHANNELS, HEART_CHANNEL, DatasetLayout
from schema.errors import DatasetLoadError, LabelError, MissingPathError
from storage.tensor_cache import TensorCache, content_key


logger = logging.getLogger(__name__)

# Bump whenever preprocessing output changes; invalidates cached tensors.
PIPELINE_VERSION = "1"


@dataclass(frozen=True)
class ImageSample:
    id: str
    image: np.ndarray       # [R, R, 1]
    mask: np.ndarray        # [R, R, 4]
    heart_annotated: bool
    source: str = ""


# -----------------------------
# Load report
# -----------------------------

class LoadReport:
    """Outcome of one assembly run: per-sample status, conflicts and errors."""

    def __init__(self, dataset: str = ""):
        self.dataset = dataset
        self.rows: List[Dict] = []

    def ok(self, sample_id: str, conflicts: int, cached: bool):
        self.rows.append({"id": sample_id, "status": "ok", "conflicts": conflicts,
                          "cached": cached, "error": None})

    def failed(self, sample_id: str, error: Exception):
        self.rows.append({"id": sample_id, "status": "failed", "conflicts": 0,
                          "cached": False, "error": f"{type(error).__name__}: {error}"})

    @property
    def failures(self) -> List[Dict]:
        return [r for r in self.rows if r["status"] == "failed"]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.rows, columns=["id", "status", "conflicts", "cached", "error"])

    def summary(self) -> Dict:
        return {
            "dataset": self.dataset,
            "total": len(self.rows),
            "loaded": len(self.rows) - len(self.failures),
            "failed": len(self.failures),
            "conflict_pixels": int(sum(r["conflicts"] for r in self.rows)),
        }


# -----------------------------
# Single sample
# -----------------------------

def build_sample(sample_id: str, image: np.ndarray, masks: Dict[str, np.ndarray],
                 resolution: int, heart_annotated: bool, source: str = "") -> Tuple[ImageSample, int]:
    """Resize, normalize and one-hot one decoded image with its organ masks."""
    x = normalize_per_image(resize_bilinear(image, resolution, resolution))
    resized = {name: resize_mask(m, resolution, resolution) for name, m in masks.items()}
    if not heart_annotated:
        resized.pop("heart", None)
    y, conflicts = one_hot_from_masks(resized, (resolution, resolution))

    if not check_one_hot(y):
        raise LabelError(f"sample {sample_id}: mask is not one-hot after encoding")
    if not heart_annotated and y[..., HEART_CHANNEL].any():
        raise LabelError(f"sample {sample_id}: heart pixels in a heart-unannotated sample")

    if conflicts:
        logger.warning("Sample %s: %d pixels claimed by more than one organ", sample_id, conflicts)
    return ImageSample(sample_id, x, y, heart_annotated, source), conflicts


def cache_fields(layout: DatasetLayout) -> Dict[str, object]:
    """Layout settings a cached sample depends on besides its source files."""
    return {"image_format": layout.image_format, "invert": layout.invert,
            "heart_annotated": layout.heart_annotated}


def _load_row(row: Dict, layout: DatasetLayout, resolution: int,
              cache: Optional[TensorCache]) -> Tuple[ImageSample, int, bool]:
    mask_paths = {c: row.get(f"mask_{c}") for c in layout.mask_dirs}
    missing = [c for c, p in mask_paths.items() if p is None]
    if missing:
        raise MissingPathError(f"sample {row['id']}: missing mask files for {', '.join(missing)}")

    key = None
    if cache is not None:
        ordered = [row["image_path"]] + [mask_paths[c] for c in CHANNELS[:3] if c in mask_paths]
        key = content_key(ordered, PIPELINE_VERSION, resolution, cache_fields(layout))
        hit = cache.get(key)
        if hit is not None:
            image, mask = hit
            return ImageSample(row["id"], image, mask, layout.heart_annotated, layout.name), 0, True

    image = load_image(row["image_path"], layout)
    masks = {c: load_mask_image(p) for c, p in mask_paths.items()}
    sample, conflicts = build_sample(row["id"], image, masks, resolution,
                                     layout.heart_annotated, layout.name)
    if cache is not None:
        cache.put(key, sample.image, sample.mask)
    return sample, conflicts, False


# -----------------------------
# Dataset assembly
# -----------------------------

def assemble_samples(layout: DatasetLayout, ids: Optional[Sequence[str]], resolution: int = 400,
                     skip_failed: bool = False, cache: Optional[TensorCache] = None,
                     workers: int = 1) -> Tuple[List[ImageSample], LoadReport]:
    """
    Load the samples named by ids (all scanned samples when None), in ids order.

    Loading may run on several threads; the returned order depends only on ids.
    """
    table = scan_dataset(layout)
    by_id = {r["id"]: r for r in table.to_dict("records")}
    wanted = list(ids) if ids is not None else sorted(by_id)

    report = LoadReport(layout.name)

    def load(sample_id):
        if sample_id not in by_id:
            raise MissingPathError(f"sample {sample_id} not found under {layout.resolved_root()}")
        return _load_row(by_id[sample_id], layout, resolution, cache)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        futures = [pool.submit(load, i) for i in wanted]

    samples = []
    for sample_id, future in zip(wanted, futures):
        try:
            sample, conflicts, cached = future.result()
        except (ValueError, OSError) as e:
            report.failed(sample_id, e)
            logger.error("Failed to load %s: %s", sample_id, e)
            continue
        report.ok(sample_id, conflicts, cached)
        samples.append(sample)

    if report.failures and not skip_failed:
        raise DatasetLoadError(
            f"{len(report.failures)} of {len(wanted)} {layout.name} samples failed to load", report
        )
    logger.info("Assembled %d %s samples at %dx%d", len(samples), layout.name, resolution, resolution)
    return samples, report

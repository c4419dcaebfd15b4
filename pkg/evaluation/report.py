"""
report.py

Purpose:
--------
Score a segmentor on a set of samples and write the metric report.

Steps per sample:
- forward_segment in eval mode
- argmax to per-class masks, optional fill_holes / keep_largest
- IoU and Dice per class, plus "Both Lungs" on the union of the lung masks

Aggregation is a fold in sample-id order. The ± column is the bootstrap
standard error of the mean over evaluation images (seeded resampling), so
two runs on the same inputs produce byte-identical reports. Prediction wall
time is kept out of the metric files and written to a separate latency file.
"""

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Sequence, Union

import numpy as np
import pandas as pd

from evaluation.metrics import dice, iou
from evaluation.postprocess import predicted_masks
from networks.model import Network
from networks.segmentor import forward_segment
from schema.config import HEART_CHANNEL
from schema.errors import ConfigError
from storage.run_store import latency_summary as summarize_latency

logger = logging.getLogger(__name__)


ROWS = ("Left Lung", "Right Lung", "Both Lungs", "Heart")
ROW_KEYS = {"Left Lung": "left_lung", "Right Lung": "right_lung",
            "Both Lungs": "both_lungs", "Heart": "heart"}

Predictor = Union[Network, Callable[[object], np.ndarray]]


@dataclass
class MetricRow:
    name: str
    iou: float
    iou_se: float
    dice: float
    dice_se: float
    count: int


@dataclass
class MetricsReport:
    rows: List[MetricRow]
    sample_count: int
    postprocess: bool
    resamples: int
    seed: int
    per_sample: pd.DataFrame = field(repr=False)
    latency_s: Dict[str, float] = field(default_factory=dict, repr=False)

    # -----------------------------
    # Views
    # -----------------------------

    def row(self, name: str) -> MetricRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    @property
    def row_names(self) -> List[str]:
        return [r.name for r in self.rows]

    def header(self) -> str:
        return (f"uncertainty: bootstrap standard error over {self.sample_count} evaluation images "
                f"({self.resamples} resamples, seed {self.seed}); "
                f"postprocess={'on' if self.postprocess else 'off'}")

    def to_table(self) -> str:
        width = max(len(n) for n in self.row_names)
        lines = [self.header(), "",
                 f"{'':<{width}}  {'IoU':>17}  {'Dice':>17}"]
        for r in self.rows:
            lines.append(f"{r.name:<{width}}  "
                         f"{100 * r.iou:7.2f} ± {100 * r.iou_se:5.2f}%  "
                         f"{100 * r.dice:7.2f} ± {100 * r.dice_se:5.2f}%")
        return "\n".join(lines) + "\n"

    def to_key_values(self) -> str:
        lines = [f"samples={self.sample_count}",
                 f"postprocess={str(self.postprocess).lower()}",
                 f"uncertainty=bootstrap_se",
                 f"bootstrap_resamples={self.resamples}",
                 f"bootstrap_seed={self.seed}"]
        for r in self.rows:
            key = ROW_KEYS[r.name]
            lines += [f"{key}.iou={r.iou:.6f}", f"{key}.iou_se={r.iou_se:.6f}",
                      f"{key}.dice={r.dice:.6f}", f"{key}.dice_se={r.dice_se:.6f}",
                      f"{key}.count={r.count}"]
        return "\n".join(lines) + "\n"

    def latency_summary(self) -> Dict[str, float]:
        return summarize_latency(self.latency_s)

    # -----------------------------
    # Files
    # -----------------------------

    def write(self, out_dir: Path, prefix: str = "metrics") -> Dict[str, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "table": out_dir / f"{prefix}.txt",
            "key_values": out_dir / f"{prefix}.kv",
            "per_sample": out_dir / f"{prefix}_per_sample.parquet",
            "latency": out_dir / f"{prefix}_latency.json",
        }
        paths["table"].write_text(self.to_table(), encoding="utf-8")
        paths["key_values"].write_text(self.to_key_values(), encoding="utf-8")
        self.per_sample.to_parquet(paths["per_sample"], index=False)
        with open(paths["latency"], "w", encoding="utf-8") as f:
            json.dump({"summary": self.latency_summary(), "per_image_s": self.latency_s},
                      f, indent=2, sort_keys=True)
        logger.info("Wrote metric report to %s", paths["table"])
        return paths


# -----------------------------
# Per-sample scoring
# -----------------------------

def _probabilities(predictor: Predictor, sample) -> np.ndarray:
    if isinstance(predictor, Network):
        return forward_segment(predictor, sample.image, mode="eval")
    return np.asarray(predictor(sample))


def score_masks(pred: np.ndarray, truth: np.ndarray, heart_annotated: bool) -> Dict[str, float]:
    """Per-class IoU / Dice for one sample; [H, W, C] boolean masks."""
    truth = np.asarray(truth) > 0.5
    pairs = {
        "left_lung": (pred[..., 0], truth[..., 0]),
        "right_lung": (pred[..., 1], truth[..., 1]),
        "both_lungs": (pred[..., 0] | pred[..., 1], truth[..., 0] | truth[..., 1]),
    }
    if heart_annotated:
        pairs["heart"] = (pred[..., HEART_CHANNEL], truth[..., HEART_CHANNEL])

    scores = {}
    for key, (P, G) in pairs.items():
        scores[f"{key}_iou"] = iou(P, G)
        scores[f"{key}_dice"] = dice(P, G)
    return scores


def _score_sample(predictor: Predictor, sample, apply_postprocess: bool) -> Dict:
    start = time.perf_counter()
    probs = _probabilities(predictor, sample)
    masks = predicted_masks(probs, apply_postprocess)
    elapsed = time.perf_counter() - start
    return {"id": sample.id, "heart_annotated": bool(sample.heart_annotated),
            "latency_s": elapsed, **score_masks(masks, sample.mask, sample.heart_annotated)}


# -----------------------------
# Aggregation
# -----------------------------

def bootstrap_se(values: Sequence[float], resamples: int = 1000, seed: int = 0) -> float:
    """Standard error of the mean by resampling images with replacement."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("bootstrap over an empty sample")
    rng = np.random.default_rng(seed)
    idx = rng.integers(0, values.size, size=(resamples, values.size))
    return float(values[idx].mean(axis=1).std())


def aggregate(per_sample: pd.DataFrame, resamples: int = 1000, seed: int = 0) -> List[MetricRow]:
    rows = []
    for name in ROWS:
        key = ROW_KEYS[name]
        if f"{key}_iou" not in per_sample:
            continue
        scored = per_sample.dropna(subset=[f"{key}_iou"])
        if scored.empty:
            continue
        ious = scored[f"{key}_iou"].to_numpy()
        dices = scored[f"{key}_dice"].to_numpy()
        rows.append(MetricRow(
            name=name,
            iou=float(ious.mean()), iou_se=bootstrap_se(ious, resamples, seed),
            dice=float(dices.mean()), dice_se=bootstrap_se(dices, resamples, seed),
            count=int(len(scored)),
        ))
    return rows


def evaluate(predictor: Predictor, samples: Sequence, postprocess: bool = True,
             resamples: int = 1000, seed: int = 0, workers: int = 1) -> MetricsReport:
    """
    Score `predictor` on `samples`.

    `predictor` is a segmentor Network or any callable mapping a sample to
    [R, R, 4] probabilities. Heart rows only count heart-annotated samples
    and are omitted when there are none.
    """
    if not samples:
        raise ConfigError("evaluate needs at least one sample")

    ordered = sorted(samples, key=lambda s: s.id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _score_sample(predictor, s, postprocess), ordered))
    else:
        results = [_score_sample(predictor, s, postprocess) for s in ordered]

    latency = {}
    for r in results:
        latency[r["id"]] = r.pop("latency_s")
    per_sample = pd.DataFrame(results)
    rows = aggregate(per_sample, resamples, seed)

    report = MetricsReport(rows=rows, sample_count=len(ordered), postprocess=postprocess,
                           resamples=resamples, seed=seed, per_sample=per_sample, latency_s=latency)
    for r in rows:
        logger.info("%-10s IoU %.4f ± %.4f  Dice %.4f ± %.4f", r.name, r.iou, r.iou_se, r.dice, r.dice_se)
    return report

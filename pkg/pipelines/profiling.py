"""
profiling.py

Purpose:
--------
Per-class statistics of an assembled dataset, written next to the load
report by the prepare command.

Output:
- <prefix>_profile.json     dataset-level summary
- <prefix>_pixels.parquet   per-sample class pixel fractions
"""

import json
import logging
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from schema.config import CHANNELS


logger = logging.getLogger(__name__)


# -----------------------------
# Profiling functions
# -----------------------------

def class_fractions(samples: Sequence) -> pd.DataFrame:
    """One row per sample: fraction of pixels in each mask channel, plus image moments."""
    rows = []
    for s in samples:
        fractions = s.mask.reshape(-1, len(CHANNELS)).mean(axis=0)
        row = {"id": s.id, "source": s.source, "heart_annotated": s.heart_annotated}
        row.update({f"frac_{c}": float(f) for c, f in zip(CHANNELS, fractions)})
        row["image_mean"] = float(np.mean(s.image, dtype=np.float64))
        row["image_std"] = float(np.std(s.image, dtype=np.float64))
        rows.append(row)
    return pd.DataFrame(rows)


def profile_samples(samples: Sequence, name: str) -> dict:
    df = class_fractions(samples)
    profile = {"dataset": name, "sample_count": int(len(df)), "class_fraction": {}}
    if df.empty:
        return profile

    for c in CHANNELS:
        col = df[f"frac_{c}"]
        profile["class_fraction"][c] = {
            "min": float(col.min()),
            "max": float(col.max()),
            "mean": float(col.mean()),
        }
    profile["heart_annotated"] = int(df["heart_annotated"].sum())
    profile["resolution"] = list(samples[0].image.shape[:2])
    return profile


def run_profiling(samples: Sequence, name: str, out_dir) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    logger.info("Profiling %s (%d samples)", name, len(samples))

    class_fractions(samples).to_parquet(out_dir / f"{name}_pixels.parquet", index=False)
    output_file = out_dir / f"{name}_profile.json"
    with open(output_file, "w") as f:
        json.dump(profile_samples(samples, name), f, indent=4, sort_keys=True)

    logger.info("Profile saved: %s", output_file)
    return output_file

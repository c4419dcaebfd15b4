"""
run_store.py

Purpose:
--------
SQL summaries over the artifacts of a run directory.

- epoch_summary: mean losses and step counts per (epoch, phase) from train_log.jsonl
- latency_summary: mean / median / max prediction wall time
- metric_summary: mean and spread of per-sample scores from a metrics parquet file

All access goes through storage.connection; files are read in place.
"""

import logging
from pathlib import Path
from typing import Mapping, Union

import pandas as pd

from schema.errors import MissingPathError
from .connection import get_connection

logger = logging.getLogger(__name__)


LOSS_COLUMNS = ("js", "adv", "jd")


# -----------------------------
# Query execution layer
# -----------------------------

def run_query(sql: str, params=None, **frames: pd.DataFrame) -> pd.DataFrame:
    """Execute SQL on an in-memory connection; keyword frames are registered as views."""
    con = get_connection()
    try:
        for name, frame in frames.items():
            con.register(name, frame)
        return con.execute(sql, params or []).fetch_df()
    finally:
        con.close()


def _source(path: Union[str, Path], reader: str) -> str:
    path = Path(path)
    if not path.exists():
        raise MissingPathError(f"run artifact not found: {path}")
    literal = str(path).replace("'", "''")
    return f"{reader}('{literal}')"


# -----------------------------
# Summaries
# -----------------------------

def epoch_summary(log_path: Union[str, Path]) -> pd.DataFrame:
    """One row per (epoch, phase): steps, mean js / adv / jd, total wall seconds."""
    source = _source(log_path, "read_ndjson_auto")

    columns = set(run_query(f"DESCRIBE SELECT * FROM {source}")["column_name"])
    means = ",\n".join(
        f"AVG({c}) AS {c}" if c in columns else f"CAST(NULL AS DOUBLE) AS {c}"
        for c in LOSS_COLUMNS
    )
    sql = f"""
        SELECT epoch, phase, COUNT(*) AS steps,
               {means},
               SUM(wall_ms) / 1000.0 AS wall_s
        FROM {source}
        GROUP BY epoch, phase
        ORDER BY epoch, phase
    """
    return run_query(sql)


def latency_summary(latency_s: Mapping[str, float]) -> dict:
    frame = pd.DataFrame({"id": list(latency_s), "seconds": list(latency_s.values())})
    if frame.empty:
        return {"images": 0, "mean_s": 0.0, "median_s": 0.0, "max_s": 0.0}
    row = run_query("""
        SELECT COUNT(*) AS images,
               AVG(seconds) AS mean_s,
               QUANTILE_CONT(seconds, 0.5) AS median_s,
               MAX(seconds) AS max_s
        FROM latency
    """, latency=frame).iloc[0]
    return {"images": int(row["images"]), "mean_s": float(row["mean_s"]),
            "median_s": float(row["median_s"]), "max_s": float(row["max_s"])}


def metric_summary(parquet_path: Union[str, Path]) -> pd.DataFrame:
    """Mean, min and standard deviation of every *_iou / *_dice column."""
    source = _source(parquet_path, "read_parquet")
    columns = run_query(f"DESCRIBE SELECT * FROM {source}")["column_name"]
    scored = [c for c in columns if c.endswith("_iou") or c.endswith("_dice")]

    parts = [
        f"SELECT '{c}' AS metric, AVG({c}) AS mean, MIN({c}) AS min, "
        f"STDDEV_POP({c}) AS std, COUNT({c}) AS images FROM {source}"
        for c in scored
    ]
    if not parts:
        return pd.DataFrame(columns=["metric", "mean", "min", "std", "images"])
    sql = " UNION ALL ".join(parts) + " ORDER BY metric"
    return run_query(sql)

"""
metrics.py

Purpose:
--------
Overlap metrics between a predicted mask P and a ground-truth mask G.

    IoU  = |P & G| / |P | G|      = TP / (TP + FP + FN)
    Dice = 2 |P & G| / (|P| + |G|) = 2 TP / (2 TP + FP + FN)

An organ that is absent from both masks scores 1.0 on both.
"""

from typing import Dict

import numpy as np

from schema.errors import ShapeError


def confusion_counts(P: np.ndarray, G: np.ndarray) -> Dict[str, int]:
    P = np.asarray(P, dtype=bool)
    G = np.asarray(G, dtype=bool)
    if P.shape != G.shape:
        raise ShapeError(f"mask shapes differ: {P.shape} vs {G.shape}")
    return {
        "tp": int(np.count_nonzero(P & G)),
        "fp": int(np.count_nonzero(P & ~G)),
        "fn": int(np.count_nonzero(~P & G)),
    }


def iou(P: np.ndarray, G: np.ndarray) -> float:
    c = confusion_counts(P, G)
    union = c["tp"] + c["fp"] + c["fn"]
    return 1.0 if union == 0 else c["tp"] / union


def dice(P: np.ndarray, G: np.ndarray) -> float:
    c = confusion_counts(P, G)
    total = 2 * c["tp"] + c["fp"] + c["fn"]
    return 1.0 if total == 0 else 2 * c["tp"] / total

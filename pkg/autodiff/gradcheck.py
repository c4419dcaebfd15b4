"""
gradcheck.py

Purpose:
--------
Central finite-difference checks for the analytic gradients.

Used by the test suite and by the `selftest` command, so it lives with the
code it checks rather than under a test directory.
"""

from typing import Callable, Dict, List, Optional

import numpy as np


ABS_FLOOR = 1e-6

# 32-bit analytic gradients against a 64-bit reference: differences below
# this scale are rounding.
FLOAT32_FLOOR = 1e-3

# Whole-network checks; larger steps cross ReLU kinks.
NETWORK_STEP = 1e-6


def relative_error(analytic: float, numeric: float, floor: float = ABS_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def numeric_partial(f: Callable[[], float], array: np.ndarray, index, step: float) -> float:
    """Central difference of f with respect to array[index]; array is restored afterwards."""
    original = array[index].copy()
    array[index] = original + step
    plus = f()
    array[index] = original - step
    minus = f()
    array[index] = original
    return (plus - minus) / (2 * step)


def probe_indices(shape, count: int, rng: np.random.Generator) -> List[tuple]:
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def check_array_gradient(f: Callable[[], float], array: np.ndarray, analytic: np.ndarray,
                         probes: int, rng: np.random.Generator,
                         step: float = 1e-3) -> float:
    """Max relative error over randomly probed entries of one array."""
    worst = 0.0
    for idx in probe_indices(array.shape, probes, rng):
        numeric = numeric_partial(f, array, idx, step)
        worst = max(worst, relative_error(float(analytic[idx]), numeric))
    return worst


def check_parameter_gradients(f: Callable[[], float], params: Dict[str, np.ndarray],
                              grads: Dict[str, np.ndarray], probes: int,
                              rng: np.random.Generator, step: float = 1e-3,
                              names: Optional[List[str]] = None,
                              floor: float = ABS_FLOOR) -> Dict[str, float]:
    """
    Probe `probes` distinct scalars drawn uniformly across the named
    parameter arrays (all of them when there are fewer).

    `grads` may hold gradients computed at another precision than `params`;
    f is evaluated on `params`.

    Returns the relative error per probed "name[index]".
    """
    names = names or list(params)
    offsets = np.concatenate([[0], np.cumsum([params[n].size for n in names])])
    total = int(offsets[-1])

    errors = {}
    for flat in rng.choice(total, size=min(probes, total), replace=False):
        k = int(np.searchsorted(offsets, flat, side="right")) - 1
        name = names[k]
        idx = np.unravel_index(int(flat - offsets[k]), params[name].shape)
        numeric = numeric_partial(f, params[name], idx, step)
        errors[f"{name}{list(idx)}"] = relative_error(float(grads[name][idx]), numeric, floor)
    return errors

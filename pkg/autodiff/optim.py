"""
optim.py

Purpose:
--------
Adam with bias correction, operating in place on named parameter arrays.

Each player of the adversarial game owns one AdamState; states are plain
dictionaries of moment buffers so checkpoints can dump them tensor by tensor.
"""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from schema.errors import DivergenceError, ShapeError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def buffers(self) -> Dict[str, np.ndarray]:
        """Flat name -> array view used for checkpointing."""
        out = {}
        for name in self.m:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_buffers(self, buffers: Mapping[str, np.ndarray], t: int):
        self.m = {k[2:]: np.array(v) for k, v in buffers.items() if k.startswith("m.")}
        self.v = {k[2:]: np.array(v) for k, v in buffers.items() if k.startswith("v.")}
        self.t = int(t)


def global_grad_norm(grads: Mapping[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float, clip_norm: Optional[float] = None) -> AdamState:
    """
    One bias-corrected Adam update, applied in place to every array in params.

    All gradients are checked before any parameter moves, so a non-finite
    gradient leaves parameters and moments exactly as they were.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise ShapeError(f"no gradient supplied for parameter {name}")
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {name} shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"non-finite gradient for parameter {name}", parameter=name)

    scale = 1.0
    if clip_norm is not None:
        norm = global_grad_norm(grads)
        if norm > clip_norm:
            scale = clip_norm / (norm + 1e-12)

    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t

    for name, p in params.items():
        g = grads[name] * scale if scale != 1.0 else grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (lr / bc1) * m / (np.sqrt(v / bc2) + state.eps)

    return state

"""
objectives.py

Purpose:
--------
Loss functions of the adversarial game and their gradients.

- J_s: pixel-averaged multi-class cross-entropy, evaluated from logits in
  log-sum-exp form
- J_d: binary cross-entropy on the critic's probability
- critic objective: sum over the batch of J_d(real, 1) + J_d(fake, 0)
- segmentor objective: sum of J_s + lam * J_d(fake, 1), the non-saturating
  replacement for -lam * J_d(fake, 0)

Heart-unannotated samples merge the heart channel into background, so a
background pixel costs -ln(p_heart + p_background) for them.
"""

from typing import Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp

from autodiff import ops
from schema.config import BACKGROUND_CHANNEL, HEART_CHANNEL
from schema.errors import LabelError, ShapeError


PROB_CLIP = 1e-7

Flags = Union[bool, Sequence[bool], np.ndarray]


# -----------------------------
# Label checks
# -----------------------------

def validate_one_hot(label: np.ndarray):
    label = np.asarray(label)
    if not np.all((label == 0) | (label == 1)):
        raise LabelError("label contains values other than 0 and 1")
    if not np.all(label.sum(axis=-1) == 1):
        raise LabelError("label is not one-hot: some pixel has zero or several active channels")


def merged_targets(labels: np.ndarray, heart_annotated: Flags) -> np.ndarray:
    """One-hot targets with background also accepting heart where no heart was annotated."""
    labels = np.asarray(labels)
    flags = np.broadcast_to(np.asarray(heart_annotated, dtype=bool), labels.shape[:1])
    if flags.all():
        return labels
    if labels[~flags, ..., HEART_CHANNEL].any():
        raise LabelError("heart pixels labeled on a sample marked as heart-unannotated")
    merged = labels.copy()
    merged[~flags, ..., HEART_CHANNEL] = labels[~flags, ..., BACKGROUND_CHANNEL]
    return merged


# -----------------------------
# J_s
# -----------------------------

def pixel_loss_Js(pred: np.ndarray, label: np.ndarray) -> float:
    """J_s on a probability map [H, W, C]; probabilities are clipped to [1e-7, 1 - 1e-7]."""
    pred = np.asarray(pred, dtype=np.float64)
    label = np.asarray(label)
    if pred.shape != label.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match label shape {label.shape}")
    validate_one_hot(label)
    picked = np.clip(pred, PROB_CLIP, 1 - PROB_CLIP)[label == 1]
    return float(-np.log(picked).mean())


def pixel_loss_from_logits(logits: np.ndarray, labels: np.ndarray,
                           heart_annotated: Flags = True) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per-sample J_s from segmentor logits [N, H, W, C].

    Returns (losses [N], gradient of sum(losses) with respect to the logits).
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if logits.shape != labels.shape:
        raise ShapeError(f"logit shape {logits.shape} does not match label shape {labels.shape}")
    validate_one_hot(labels)

    targets = merged_targets(labels, heart_annotated).astype(logits.dtype)
    n, h, w, _ = logits.shape

    lse_all = logsumexp(logits, axis=-1)
    lse_target, _ = logsumexp(logits, axis=-1, b=targets, return_sign=True)
    losses = (lse_all - lse_target).reshape(n, -1).mean(axis=1)

    p = ops.softmax_channels(logits)
    tp = targets * p
    grad = (p - tp / tp.sum(axis=-1, keepdims=True)) / (h * w)
    return losses, grad.astype(logits.dtype, copy=False)


# -----------------------------
# J_d
# -----------------------------

def binary_loss_Jd(t_hat, t) -> Union[float, np.ndarray]:
    """-t ln t_hat - (1 - t) ln(1 - t_hat), with t_hat clipped to [1e-7, 1 - 1e-7]."""
    t_hat = np.clip(np.asarray(t_hat, dtype=np.float64), PROB_CLIP, 1 - PROB_CLIP)
    t = np.asarray(t, dtype=np.float64)
    out = -t * np.log(t_hat) - (1 - t) * np.log(1 - t_hat)
    return float(out) if out.ndim == 0 else out


def binary_loss_Jd_grad(logit, t) -> np.ndarray:
    """d J_d(sigmoid(z), t) / dz."""
    return ops.sigmoid(np.asarray(logit)) - np.asarray(t, dtype=np.float64)


def nonsaturating_generator_loss(t_hat):
    """J_d(t_hat, 1): what the segmentor minimizes."""
    return binary_loss_Jd(t_hat, 1.0)


def saturating_generator_loss(t_hat):
    """-J_d(t_hat, 0) = ln(1 - t_hat): the minimax form it replaces."""
    return -binary_loss_Jd(t_hat, 0.0)


# -----------------------------
# Per-player objectives
# -----------------------------

def critic_objective(real_probs, fake_probs) -> float:
    real = np.asarray(real_probs, dtype=np.float64)
    fake = np.asarray(fake_probs, dtype=np.float64)
    if real.shape != fake.shape:
        raise ShapeError(f"real scores {real.shape} and fake scores {fake.shape} differ in shape")
    return float(np.sum(binary_loss_Jd(real, 1.0)) + np.sum(binary_loss_Jd(fake, 0.0)))


def segmentor_objective(pixel_losses, fake_probs, lam: float) -> float:
    """sum(J_s) + lam * sum(J_d(D(x, S(x)), 1)); the adversarial term vanishes at lam = 0."""
    total = float(np.sum(pixel_losses))
    if lam == 0:
        return total
    return total + lam * float(np.sum(binary_loss_Jd(np.asarray(fake_probs), 1.0)))


def minimax_value(pixel_losses, real_probs, fake_probs, lam: float) -> float:
    """The joint objective: S minimizes it, D maximizes it."""
    return float(np.sum(pixel_losses)) - lam * critic_objective(real_probs, fake_probs)

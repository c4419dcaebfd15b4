"""
trainer.py

Purpose:
--------
Optimization schedule of the adversarial game.

Epochs [0, pretrain_epochs) train the segmentor on J_s alone, one Adam
step per minibatch. Later epochs run, per minibatch, s_steps_per_d_step
segmentor steps on the segmentor objective followed by one critic step
on the critic objective, both on the same minibatch. When no gradient
reaches the segmentor through the critic (lam = 0 or fcn_only) the
segmentor keeps the pretraining schedule of one step per minibatch, so
its trajectory is a plain continuation of pretraining.

The critic always scores the real and predicted masks of a minibatch as
one batch of 2N inputs, in both players' steps. The player that is not
being updated runs with batch statistics and leaves its running
statistics alone, so a step changes no state of the other player.

Every source of randomness is the per-epoch permutation drawn from
(seed, epoch); a run resumed at an epoch boundary replays exactly.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from autodiff import ops
from autodiff.optim import AdamState, adam_step
from networks.critic import critic_input
from networks.model import Network
from schema.config import HEART_CHANNEL, TrainConfig
from schema.errors import ConfigError, DivergenceError
from training.objectives import (
    binary_loss_Jd,
    binary_loss_Jd_grad,
    critic_objective,
    pixel_loss_from_logits,
)
from training.train_log import StepRecord, TrainLog


logger = logging.getLogger(__name__)

MASK_CHANNELS = 4


# -----------------------------
# Minibatches
# -----------------------------

@dataclass
class Minibatch:
    ids: List[str]
    images: np.ndarray      # [N, R, R, 1]
    masks: np.ndarray       # [N, R, R, 4] one-hot
    heart: np.ndarray       # [N] bool

    def __len__(self):
        return len(self.ids)


def stack_batch(samples: Sequence) -> Minibatch:
    return Minibatch(
        ids=[s.id for s in samples],
        images=np.stack([s.image for s in samples]),
        masks=np.stack([s.mask for s in samples]),
        heart=np.array([s.heart_annotated for s in samples], dtype=bool),
    )


def epoch_permutation(seed: int, epoch: int, n: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def iter_minibatches(samples: Sequence, seed: int, epoch: int, batch_size: int):
    """Shuffled minibatches; the final short batch is used as-is."""
    order = epoch_permutation(seed, epoch, len(samples))
    for start in range(0, len(order), batch_size):
        yield stack_batch([samples[i] for i in order[start:start + batch_size]])


# -----------------------------
# Critic update (also used standalone)
# -----------------------------

def critic_update(D: Network, state: AdamState, real_inputs: np.ndarray, fake_inputs: np.ndarray,
                  lr: float, clip_norm: Optional[float] = None) -> Tuple[float, np.ndarray, np.ndarray]:
    """
    One Adam step on the critic objective.

    Returns (objective, real scores, fake scores) as evaluated before the step.
    """
    n = real_inputs.shape[0]
    x = np.concatenate([real_inputs, fake_inputs]).astype(D.dtype, copy=False)
    targets = np.concatenate([np.ones(n), np.zeros(fake_inputs.shape[0])])

    D.zero_grad()
    z = D.logits(x, mode="train", record=True, update_stats=True)
    scores = ops.sigmoid(z)
    jd = critic_objective(scores[:n], scores[n:])
    if not np.isfinite(jd):
        D.clear()
        raise DivergenceError(f"non-finite critic objective {jd}", phase="critic")

    D.backward(binary_loss_Jd_grad(z, targets).astype(D.dtype))
    D.clear()
    adam_step(D.param_arrays(), D.grads(), state, lr, clip_norm)
    return jd, scores[:n], scores[n:]


# -----------------------------
# Session
# -----------------------------

class TrainingSession:

    def __init__(self, S: Network, D: Optional[Network], config: TrainConfig,
                 log: Optional[TrainLog] = None,
                 checkpointer: Optional[Callable[["TrainingSession"], None]] = None):
        if config.mode == "scan" and D is None:
            raise ConfigError("mode 'scan' needs a critic network")
        self.S = S
        self.D = D if config.mode == "scan" else None
        self.config = config
        self.log = log or TrainLog()
        self.checkpointer = checkpointer
        self.s_opt = AdamState()
        self.d_opt = AdamState()
        self.epoch = 0          # next epoch to run
        self.step = 0           # next optimizer step index

    @property
    def lam(self) -> float:
        return self.config.effective_lam

    def phase_of(self, epoch: int) -> str:
        return "pretrain" if epoch < self.config.pretrain_epochs else "adversarial"

    # -----------------------------
    # Single steps
    # -----------------------------

    def segmentor_step(self, batch: Minibatch, lam: float) -> StepRecord:
        t0 = time.perf_counter()
        phase = "pretrain" if self.phase_of(self.epoch) == "pretrain" else "segmentor"

        js, adv = self.segmentor_gradients(batch, lam, phase=phase)
        self._apply(self.S, self.s_opt, phase)

        return self._record(phase, batch, t0, js=float(np.mean(js)), adv=adv)

    def segmentor_gradients(self, batch: Minibatch, lam: float, update_stats: bool = True,
                            phase: str = "segmentor") -> Tuple[np.ndarray, Optional[float]]:
        """
        Accumulate the gradient of sum J_s + lam * sum J_d(fake, 1) into S's
        parameter grads without taking a step.

        Returns per-sample J_s and the mean adversarial term (None when lam = 0).
        """
        S = self.S
        S.zero_grad()
        z = S.logits(batch.images, mode="train", record=True, update_stats=update_stats)
        js, grad_z = pixel_loss_from_logits(z, batch.masks, batch.heart)

        adv = None
        if lam > 0 and self.D is not None:
            p = ops.softmax_channels(z)
            fake_scores, grad_p = self._adversarial_grad(batch, p, lam)
            adv = float(np.mean(binary_loss_Jd(fake_scores, 1.0)))
            grad_z = grad_z + ops.softmax_backward(p, grad_p)

        try:
            self._check_finite(phase, js=float(np.sum(js)), adv=adv)
        except DivergenceError:
            S.clear()
            raise
        S.backward(grad_z)
        S.clear()
        return js, adv

    def _adversarial_grad(self, batch: Minibatch, p: np.ndarray, lam: float) -> Tuple[np.ndarray, np.ndarray]:
        """Critic scores of the predictions and d(lam * sum J_d(fake, 1)) / d(predictions)."""
        D = self.D
        n = len(batch)
        image = batch.images if self.config.include_image else None
        x = np.concatenate([
            critic_input(batch.masks, image, batch.heart),
            critic_input(p, image, batch.heart),
        ]).astype(D.dtype, copy=False)

        D.zero_grad()
        z = D.logits(x, mode="train", record=True, update_stats=False)
        scores = ops.sigmoid(z)
        g = np.zeros_like(z)
        g[n:] = lam * (scores[n:] - 1.0)
        grad_x = D.backward(g)
        D.zero_grad()
        D.clear()

        grad_p = grad_x[n:, ..., :MASK_CHANNELS].astype(p.dtype, copy=True)
        grad_p[~batch.heart, ..., HEART_CHANNEL] = 0
        return scores[n:], grad_p

    def critic_step(self, batch: Minibatch) -> StepRecord:
        t0 = time.perf_counter()
        image = batch.images if self.config.include_image else None
        p = self.S.forward(batch.images, mode="train", record=False, update_stats=False)
        real = critic_input(batch.masks, image, batch.heart)
        fake = critic_input(p, image, batch.heart)

        try:
            jd, _, _ = critic_update(self.D, self.d_opt, real, fake, self.config.lr, self.config.clip_norm)
        except DivergenceError as e:
            self._diverged(e, "critic")
            raise
        return self._record("critic", batch, t0, jd=jd / len(batch))

    # -----------------------------
    # Bookkeeping
    # -----------------------------

    def _apply(self, net: Network, opt: AdamState, phase: str):
        try:
            adam_step(net.param_arrays(), net.grads(), opt, self.config.lr, self.config.clip_norm)
        except DivergenceError as e:
            self._diverged(e, phase)
            raise

    def _check_finite(self, phase: str, **losses):
        bad = {k: v for k, v in losses.items() if v is not None and not np.isfinite(v)}
        if bad:
            e = DivergenceError(f"non-finite {phase} loss {bad} at step {self.step}")
            self._diverged(e, phase)
            raise e

    def _diverged(self, e: DivergenceError, phase: str):
        e.step = self.step
        e.phase = phase
        details = {k: v for k, v in e.diagnostics().items() if k != "event"}
        self.log.event("divergence", epoch=self.epoch, **details)
        logger.error("training diverged at step %d (%s): %s", self.step, phase, e)

    def _record(self, phase: str, batch: Minibatch, t0: float, **values) -> StepRecord:
        record = StepRecord(
            step=self.step, epoch=self.epoch, phase=phase, batch_size=len(batch),
            wall_ms=(time.perf_counter() - t0) * 1000.0, **values,
        )
        self.log.append(record)
        self.step += 1
        return record

    # -----------------------------
    # Epoch loop
    # -----------------------------

    def run_epoch(self, samples: Sequence):
        cfg = self.config
        adversarial = self.phase_of(self.epoch) == "adversarial"
        s_steps = self.segmentor_steps_per_batch()
        for batch in iter_minibatches(samples, cfg.seed, self.epoch, cfg.batch_size):
            if not adversarial:
                self.segmentor_step(batch, lam=0.0)
                continue
            for _ in range(s_steps):
                self.segmentor_step(batch, lam=self.lam)
            if self.D is not None:
                self.critic_step(batch)

    def segmentor_steps_per_batch(self) -> int:
        if self.phase_of(self.epoch) == "pretrain" or self.lam == 0 or self.D is None:
            return 1
        return self.config.s_steps_per_d_step

    def run(self, samples: Sequence, stop_epoch: Optional[int] = None) -> TrainLog:
        """Run epochs from self.epoch up to stop_epoch (default: all configured epochs)."""
        if not samples:
            raise ConfigError("training set is empty")
        stop = self.config.epochs if stop_epoch is None else min(stop_epoch, self.config.epochs)

        while self.epoch < stop:
            first_step = self.step
            self.run_epoch(samples)
            self._log_epoch(first_step)
            self.epoch += 1
            if self.checkpointer and self.checkpoint_due():
                self.checkpointer(self)
        return self.log

    def checkpoint_due(self) -> bool:
        """True right after an epoch that closes a checkpoint interval or the run."""
        return self.epoch % self.config.checkpoint_every == 0 or self.epoch == self.config.epochs

    def _log_epoch(self, first_step: int):
        recent = [r for r in self.log.records if r.step >= first_step]

        def mean(field):
            vals = [getattr(r, field) for r in recent if getattr(r, field) is not None]
            return f"{np.mean(vals):.4f}" if vals else "-"

        logger.info("epoch %d/%d (%s): J_s %s  adv %s  J_d %s", self.epoch + 1, self.config.epochs,
                    self.phase_of(self.epoch), mean("js"), mean("adv"), mean("jd"))


# -----------------------------
# Convenience entry points
# -----------------------------

def pretrain(S: Network, samples: Sequence, config: TrainConfig,
             log: Optional[TrainLog] = None) -> Tuple[Network, TrainLog]:
    """Pixel-loss-only epochs [0, pretrain_epochs)."""
    session = TrainingSession(S, None, config.model_copy(update={"mode": "fcn_only"}), log)
    session.run(samples, stop_epoch=config.pretrain_epochs)
    return S, session.log


def train_scan(S: Network, D: Optional[Network], samples: Sequence, config: TrainConfig,
               log: Optional[TrainLog] = None) -> Tuple[Network, Optional[Network], TrainLog]:
    """Adversarial epochs [pretrain_epochs, epochs) starting from the given (pretrained) S."""
    session = TrainingSession(S, D, config, log)
    session.epoch = config.pretrain_epochs
    session.run(samples)
    return S, D, session.log

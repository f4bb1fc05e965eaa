"""Training loop: random crops with dihedral augmentation, L1 loss, Adam, step decay."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import grad as G
from .config import HiMambaConfig
from .errors import InputError
from .inference import DIHEDRAL, dihedral
from .network import ModelWeights, himamba_forward, init_weights
from .optim import DEFAULT_MILESTONES, AdamState, adam_step, step_decay_lr

__all__ = ["TrainSchedule", "sample_batch", "train_step", "train", "write_loss_csv"]

log = logging.getLogger(__name__)


@dataclass
class TrainSchedule:
    iters: int = 1000
    lr: float = 2e-4
    milestones: tuple = DEFAULT_MILESTONES
    batch_size: int = 8
    patch_size: int = 64      # LR side; the HR crop is scale times larger
    augment: bool = True
    seed: int = 0
    log_every: int = 50


def sample_batch(pairs, scale, batch_size, patch, rng, augment=True):
    """Random aligned LR/HR crops, each with a uniformly drawn dihedral transform."""
    lrs, hrs = [], []
    for _ in range(batch_size):
        lr, hr = pairs[rng.integers(len(pairs))]
        h, w = lr.shape[-2:]
        ph, pw = min(patch, h), min(patch, w)
        y = rng.integers(0, h - ph + 1)
        x = rng.integers(0, w - pw + 1)
        lp = lr[:, y:y + ph, x:x + pw]
        hp = hr[:, y * scale:(y + ph) * scale, x * scale:(x + pw) * scale]
        if augment:
            k = rng.integers(len(DIHEDRAL))
            lp, hp = dihedral(lp, k), dihedral(hp, k)
        lrs.append(np.ascontiguousarray(lp))
        hrs.append(np.ascontiguousarray(hp))
    return np.stack(lrs), np.stack(hrs)


def train_step(params, cfg, lr_batch, hr_batch):
    """Forward + L1 + backward; returns ``(loss, grads)``."""
    tape = G.Tape()
    nodes = tape.params(params)
    loss = G.l1_loss(himamba_forward(lr_batch, nodes, cfg), hr_batch)
    return float(loss.value), tape.backward(loss)


def train(config: HiMambaConfig, dataset, schedule: TrainSchedule, weights: ModelWeights | None = None):
    """Optimize on ``dataset`` (a list of ``(lr, hr)`` pairs).

    Returns ``(weights, curve)`` with ``curve`` a list of
    ``(iteration, lr, loss)`` tuples, one per iteration.
    """
    if not dataset:
        raise InputError("training dataset is empty")
    rng = np.random.default_rng(schedule.seed)
    if weights is None:
        weights = init_weights(config, seed=schedule.seed)
    params = dict(weights.params)
    state = AdamState()
    curve = []
    for it in range(schedule.iters):
        lr = step_decay_lr(it, schedule.iters, schedule.lr, schedule.milestones)
        lrb, hrb = sample_batch(dataset, config.scale, schedule.batch_size, schedule.patch_size,
                                rng, schedule.augment)
        loss, grads = train_step(params, config, lrb, hrb)
        params, state = adam_step(params, grads, state, lr)
        curve.append((it, lr, loss))
        if schedule.log_every and it % schedule.log_every == 0:
            log.info("iter %d lr %.2e loss %.5f", it, lr, loss)
    return ModelWeights(config, params), curve


def write_loss_csv(curve, fh):
    out = csv.writer(fh)
    out.writerow(["iteration", "lr", "loss"])
    for it, lr, loss in curve:
        out.writerow([it, repr(lr), repr(loss)])

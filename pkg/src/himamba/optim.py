"""Adam and the step-decay learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["AdamState", "adam_step", "step_decay_lr", "DEFAULT_MILESTONES"]

# fractions of the run at which the learning rate is halved
DEFAULT_MILESTONES = (0.5, 0.8, 0.9, 0.95)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


def adam_step(params, grads, state: AdamState, lr):
    """One bias-corrected Adam update; returns ``(new_params, state)``.

    Parameters without a gradient entry are left untouched.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            out[name] = p
            continue
        if state.weight_decay:
            g = g + state.weight_decay * p
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1.0 - state.beta1) * g if m is None else state.beta1 * m + (1.0 - state.beta1) * g
        v = (1.0 - state.beta2) * g * g if v is None else state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = p - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return out, state


def step_decay_lr(iteration, total, base_lr, milestones=DEFAULT_MILESTONES, factor=0.5):
    """Learning rate at 0-based ``iteration``: ``base_lr`` times ``factor`` per milestone passed."""
    passed = sum(1 for m in milestones if iteration >= round(m * total))
    return base_lr * factor ** passed

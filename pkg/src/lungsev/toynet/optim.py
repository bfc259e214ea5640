"""Adaptive-moment optimizer with dynamic step-size bounds.

Standard first/second moment accumulation with bias correction, where the
per-parameter step size is clamped into a schedule that starts wide and
tightens toward final_lr, so the behavior anneals from adaptive to SGD-like.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import InputError
from .tensor import Tensor

log = logging.getLogger("lungsev.toynet")


def bound_schedule(t: int, final_lr: float = 0.1, gamma: float = 1e-3) -> tuple[float, float]:
    """Step-size clamp interval at step t >= 1; converges to final_lr."""
    if t < 1:
        raise InputError(f"bound schedule needs t >= 1, got {t}")
    lower = final_lr * (1.0 - 1.0 / (gamma * t + 1.0))
    upper = final_lr * (1.0 + 1.0 / (gamma * t))
    return lower, upper


@dataclass
class OptimizerState:
    lr: float = 0.001
    final_lr: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    gamma: float = 1e-3
    step_count: int = 0
    skipped_steps: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def optimizer_step(params: dict[str, Tensor], grads: dict[str, np.ndarray],
                   state: OptimizerState) -> bool:
    """Apply one update in place. Returns False (and counts a skip) when any
    gradient is non-finite; parameters and moments are left untouched then."""
    names = sorted(params)
    for name in names:
        g = grads.get(name)
        if g is not None and not np.all(np.isfinite(g)):
            state.skipped_steps += 1
            log.warning("non-finite gradient for %s at step %d; step skipped",
                        name, state.step_count + 1)
            return False

    state.step_count += 1
    t = state.step_count
    lower, upper = bound_schedule(t, state.final_lr, state.gamma)
    step_size = state.lr * np.sqrt(1.0 - state.beta2**t) / (1.0 - state.beta1**t)
    for name in names:
        p = params[name]
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        g = np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise InputError(f"gradient shape {g.shape} != param shape {p.data.shape} for {name}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        eff = np.clip(step_size / (np.sqrt(v) + state.eps), lower, upper)
        p.data = p.data - eff * m
    return True

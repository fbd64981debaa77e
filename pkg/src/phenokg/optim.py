"""AdamW with decoupled weight decay and a cosine warm-restart schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamWState:
    """Per-parameter moment estimates plus the shared step counter."""

    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: AdamWState, lr: float | None = None) -> None:
    """Apply one AdamW update to every parameter that received a gradient.

    Weight decay is decoupled: it is added to the update directly and never
    enters the moment estimates.  Raises on non-finite gradients so a broken
    training step cannot silently corrupt the parameters.
    """
    if lr is None:
        lr = state.lr
    if lr <= 0:
        raise ValueError(f"learning rate must be positive, got {lr}")
    for name, p in params.items():
        if p.grad is not None and not np.isfinite(p.grad).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}; step aborted")

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.values)
            v = np.zeros_like(p.values)
        else:
            v = state.v[name]
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        state.m[name] = m
        state.v[name] = v
        update = (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        p.values = p.values - lr * update - lr * state.weight_decay * p.values


@dataclass
class CosineRestarts:
    """Cosine annealing with warm restarts; cycle lengths grow by t_mult."""

    t0: int = 10
    t_mult: int = 2
    lr_max: float = 1e-4
    lr_min: float = 0.0

    def __post_init__(self):
        if self.t0 < 1 or self.t_mult < 1:
            raise ValueError("t0 and t_mult must be >= 1")
        if self.lr_min > self.lr_max:
            raise ValueError("lr_min must not exceed lr_max")


def lr_at(schedule: CosineRestarts, epoch: int) -> float:
    """Learning rate at the start of ``epoch`` (0-based) under warm restarts."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    t_i = schedule.t0
    t_cur = epoch
    while t_cur >= t_i:
        t_cur -= t_i
        t_i *= schedule.t_mult
    if t_cur == 0:  # cycle start must hit lr_max exactly
        return schedule.lr_max
    span = schedule.lr_max - schedule.lr_min
    return schedule.lr_min + span * (1.0 + math.cos(math.pi * t_cur / t_i)) / 2.0

"""AdamW with decoupled weight decay, and a cosine-annealed learning rate."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ContractError


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params, **hyper) -> "AdamWState":
        state = cls(**hyper)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adamw_step(params, state: AdamWState, lr: float) -> None:
    """One in-place AdamW update over every parameter; clears gradients.

    Raises ``ContractError`` before touching anything if a gradient is missing.
    """
    missing = [name for name, t in params.items() if t.grad is None]
    if missing:
        raise ContractError(f"adamw_step: no gradient for {missing[:3]}{'...' if len(missing) > 3 else ''}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        update = m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p.data
        p.data -= (lr * update).astype(p.data.dtype)
        p.grad = None


@dataclass(frozen=True)
class CosineSchedule:
    total_steps: int
    lr_max: float = 2e-4
    lr_min: float = 0.0

    def __call__(self, step: int) -> float:
        return cosine_lr(self, step)


def cosine_lr(schedule: CosineSchedule, step: int) -> float:
    """lr_min + (lr_max - lr_min)(1 + cos(pi * step / T)) / 2, step clamped to [0, T]."""
    T = schedule.total_steps
    if T <= 0:
        return schedule.lr_max
    s = min(max(step, 0), T)
    return schedule.lr_min + 0.5 * (schedule.lr_max - schedule.lr_min) * (1.0 + math.cos(math.pi * s / T))

"""AdamW with decoupled weight decay, and the warmup + cosine learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from tap import ndcompute as nd
from tap.errors import ContractError


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def no_decay(name: str) -> bool:
    """Biases, normalization affines and the pad token are not weight-decayed."""
    return name.endswith((".bias", ".gain")) or name.endswith(".pad")


def adamw_step(params: nd.ParamSet, state: AdamState, lr: float, wd: float, betas=(0.9, 0.999), eps: float = 1e-8,
               decay=lambda name: True) -> AdamState:
    """One in-place AdamW update from the ``.grad`` of every parameter.

    Weight decay shrinks ``w`` by ``lr * wd * w`` before, and independently of,
    the bias-corrected moment step. ``decay(name)`` selects decayed tensors.
    """
    b1, b2 = betas
    missing = [k for k in params if params[k].grad is None]
    if missing:
        raise ContractError(f"adamw_step: no gradient for {missing[:5]}")
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name in params:
        p = params[name]
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        if wd and decay(name):
            p.data -= p.data.dtype.type(lr * wd) * p.data
        p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype)
    return state


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float, warmup_steps: int = 0) -> float:
    """Linear warmup from 0 to ``lr0``, then cosine annealing down to ``lr_min``."""
    if not 0 <= step <= total_steps:
        raise ContractError(f"cosine_lr: step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return lr0 * step / warmup_steps
    span = total_steps - warmup_steps
    t = (step - warmup_steps) / span if span > 0 else 1.0
    return lr_min + 0.5 * (lr0 - lr_min) * (1.0 + math.cos(math.pi * t))

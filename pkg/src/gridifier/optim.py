"""AdamW with decoupled weight decay, plus the warmup/cosine schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import ConfigError, TrainingError
from .nn import decays_weight


@dataclass
class AdamWState:
    """Per-parameter moment estimates and the shared hyperparameters.

    Weight decay is decoupled from the gradient step and skipped for biases,
    normalization scales, and frequency matrices (anything ``decays_weight``
    rejects).
    """

    lr: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_init(params: dict[str, Tensor], lr: float, weight_decay: float = 0.0,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamWState:
    state = AdamWState(lr, weight_decay, beta1, beta2, eps)
    for name, p in params.items():
        state.m[name] = np.zeros_like(p.data)
        state.v[name] = np.zeros_like(p.data)
    return state


def adamw_step(state: AdamWState, params: dict[str, Tensor], lr: float | None = None) -> None:
    """One in-place update; ``lr`` overrides the stored rate (for schedules)."""
    lr = state.lr if lr is None else lr
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for name, p in params.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        if state.weight_decay and decays_weight(name):
            p.data *= 1.0 - lr * state.weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def lr_at(epoch: int, total_epochs: int, warmup_epochs: int, base_lr: float) -> float:
    """Linear ramp to base_lr over the warmup epochs, then cosine decay toward 0.

    lr(epoch) = base_lr * epoch / warmup  for epoch < warmup (so the midpoint
    sits at exactly base_lr / 2), reaching base_lr at epoch == warmup, then
    base_lr * 0.5 * (1 + cos(pi * (epoch - warmup) / (total - warmup))).
    """
    if warmup_epochs >= total_epochs:
        raise ConfigError(f"warmup {warmup_epochs} must be < total epochs {total_epochs}")
    if not 0 <= epoch < total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < warmup_epochs:
        return base_lr * epoch / warmup_epochs
    return base_lr * 0.5 * (1.0 + np.cos(np.pi * (epoch - warmup_epochs) / (total_epochs - warmup_epochs)))

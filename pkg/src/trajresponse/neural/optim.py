"""Adam with global-norm gradient clipping."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .params import ParameterSet

log = logging.getLogger(__name__)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    total = 0.0
    for g in grads.values():
        total += float(np.square(g).sum())
    return math.sqrt(total)


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict, float]:
    """Scale all gradients by a common factor so the global norm is <= max_norm.

    Returns (clipped gradients, pre-clip norm).  Never increases the norm.
    """
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return grads, norm
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}, norm


@dataclass
class AdamState:
    """First/second moment estimates plus the step counter."""

    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped_steps: int = 0

    @classmethod
    def for_params(cls, params: ParameterSet) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in params.arrays.items()},
                   v={k: np.zeros_like(a) for k, a in params.arrays.items()})


def adam_step(params: ParameterSet, grads: dict[str, np.ndarray], state: AdamState,
              lr: float = 0.003, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8, max_norm: float = 10.0) -> ParameterSet:
    """One Adam update after global-norm clipping; mutates params in place.

    A non-finite gradient before clipping skips the whole step (parameters and
    moments untouched) and logs the event.
    """
    for k, g in grads.items():
        if not np.isfinite(g).all():
            state.skipped_steps += 1
            log.warning("skipping optimizer step: non-finite gradient in %s", k)
            return params
    grads, _ = clip_global_norm(grads, max_norm)
    state.step += 1
    t = state.step
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for k, g in grads.items():
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * np.square(g)
        params.arrays[k] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params

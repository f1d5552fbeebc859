"""AdamW with decoupled weight decay and global-norm gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .exceptions import DimensionError
from .params import ParamStore


def decays(name: str) -> bool:
    """Weight decay applies to matrices only: biases, layer-norm gains and
    shifts, CLS, position embeddings and the mask token are exempt."""
    return name.endswith(".weight") or name == "convkb.filters"


@dataclass
class OptimState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    @classmethod
    def for_params(cls, params: ParamStore) -> "OptimState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float((g * g).sum()) for g in grads.values()))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float | None) -> dict[str, np.ndarray]:
    if max_norm is None:
        return grads
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


def adamw_step(params: ParamStore, grads: dict[str, np.ndarray], state: OptimState,
               config: TrainConfig) -> None:
    """One bias-corrected Adam update plus decoupled decay, in place.

    Decay is applied first, ``theta <- theta - lr * wd * theta``, then the
    Adam step ``theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)``.
    Clipping is the caller's job (see :func:`clip_by_global_norm`).
    """
    lr, wd, eps = config.learning_rate, config.weight_decay, config.eps
    beta1, beta2 = config.betas
    for name in params:
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(params[name])
        if g.shape != params[name].shape or state.m[name].shape != params[name].shape:
            raise DimensionError(f"{name}: gradient/state shape does not match parameter {params[name].shape}")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, theta in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(theta)
        m = state.m[name] = beta1 * state.m[name] + (1.0 - beta1) * g
        v = state.v[name] = beta2 * state.v[name] + (1.0 - beta2) * g * g
        if wd and decays(name):
            theta -= lr * wd * theta
        theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)

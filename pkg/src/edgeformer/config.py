"""Model and optimisation hyperparameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from fractions import Fraction

from .exceptions import ConfigurationError


def parse_ratio(value) -> float:
    """Accept floats or ``"a/b"`` strings (``"1/3"`` is the default mask ratio)."""
    if isinstance(value, str):
        try:
            return float(Fraction(value.strip()))
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigurationError(f"cannot parse ratio {value!r}") from exc
    return float(value)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture of the Edge Transformer and its MAE decoder.

    Defaults are the desk-scale setting: D=48 keeps the three attention heads
    of the published setup while staying divisible by the head count.
    """

    d_model: int = 48
    n_heads: int = 3
    n_encoder_layers: int = 2
    n_decoder_layers: int = 1
    ffn_dim: int | None = None
    dim_head_features: int = 16
    dim_edge_features: int = 4
    dim_tail_features: int = 16
    mask_ratio: float = 1.0 / 3.0
    dropout: float = 0.0
    layer_norm_eps: float = 1e-5
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, "mask_ratio", parse_ratio(self.mask_ratio))
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.d_model)
        for name in ("d_model", "n_heads", "ffn_dim", "dim_head_features",
                     "dim_edge_features", "dim_tail_features"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 1:
                raise ConfigurationError(f"{name} must be a positive int, got {value!r}")
        for name in ("n_encoder_layers", "n_decoder_layers"):
            value = getattr(self, name)
            if not isinstance(value, int) or value < 0:
                raise ConfigurationError(f"{name} must be a non-negative int, got {value!r}")
        if self.d_model % self.n_heads:
            raise ConfigurationError(
                f"d_model={self.d_model} is not divisible by n_heads={self.n_heads}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError(f"mask_ratio must lie in (0, 1), got {self.mask_ratio}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    @property
    def feature_widths(self) -> tuple[int, int, int]:
        return self.dim_head_features, self.dim_edge_features, self.dim_tail_features

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    """Optimiser and loop settings shared by pre-training, fine-tuning and baselines.

    ``max_steps`` (optional) stops a run after that many optimiser steps even
    mid-epoch; ``clip_norm=None`` disables global-norm gradient clipping.
    """

    learning_rate: float = 1e-3
    weight_decay: float = 0.05
    batch_size: int = 256
    epochs: int = 50
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    mode: str = "finetune"
    clip_norm: float | None = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.learning_rate <= 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.weight_decay < 0:
            raise ConfigurationError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigurationError("batch_size and epochs must be positive")
        if len(self.betas) != 2 or not all(0.0 < b < 1.0 for b in self.betas):
            raise ConfigurationError(f"betas must both lie in (0, 1), got {self.betas}")
        if self.eps <= 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive or None")
        if self.max_steps is not None and self.max_steps < 1:
            raise ConfigurationError("max_steps must be positive or None")

    @classmethod
    def pretrain_defaults(cls, **overrides) -> "TrainConfig":
        # batch 2048 in the published runs, scaled to 256 here
        base = dict(learning_rate=1.5e-4, weight_decay=0.05, batch_size=256, epochs=20, mode="pretrain")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(learning_rate=1e-3, weight_decay=0.05, batch_size=256, epochs=50, mode="finetune")
        base.update(overrides)
        return cls(**base)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["betas"] = list(self.betas)
        return d


__all__ = ["ModelConfig", "TrainConfig", "parse_ratio"]

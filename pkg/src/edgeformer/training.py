"""Seeded pre-training, fine-tuning and baseline training loops."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .baselines import baseline_logits, init_baseline
from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig
from .data import UNLABELED, EdgeDataset, Standardizer
from .exceptions import ValidationError
from .mae import init_mae_params, mae_forward, sample_masks
from .optim import OptimState, adamw_step, clip_by_global_norm
from .params import ParamStore
from .transformer import edge_logits, init_edge_transformer

logger = logging.getLogger(__name__)

BatchLoss = Callable[[dict, np.ndarray, np.random.Generator], ad.Tensor]


@dataclass
class TrainResult:
    params: ParamStore
    trace: list[float]
    steps: int
    state: OptimState
    checkpoint: Checkpoint


def init_rng(seed: int) -> np.random.Generator:
    """Stream used for parameter initialisation, separate from the loop's."""
    return np.random.default_rng([seed, 1])


def run_epochs(params: ParamStore, n_items: int, batch_loss: BatchLoss, config: TrainConfig,
               rng: np.random.Generator, state: OptimState | None = None) -> tuple[list[float], int, OptimState]:
    """Shuffle, batch, differentiate and step. Returns the per-epoch mean loss.

    The batch size is capped at the number of items.
    """
    if n_items < 1:
        raise ValidationError("cannot train on an empty dataset")
    state = state or OptimState.for_params(params)
    batch_size = min(config.batch_size, n_items)
    trace: list[float] = []
    steps = 0
    for epoch in range(config.epochs):
        order = rng.permutation(n_items)
        total, seen = 0.0, 0
        for start in range(0, n_items, batch_size):
            idx = order[start:start + batch_size]
            leaves = params.leaves(requires_grad=True)
            loss = batch_loss(leaves, idx, rng)
            loss.backward()
            grads = clip_by_global_norm({k: t.grad for k, t in leaves.items()}, config.clip_norm)
            adamw_step(params, grads, state, config)
            total += loss.item() * len(idx)
            seen += len(idx)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                break
        trace.append(total / seen)
        logger.info("%s epoch %d loss %.6f", config.mode, epoch + 1, trace[-1])
        if config.max_steps is not None and steps >= config.max_steps:
            break
    return trace, steps, state


def _fit_standardizer(data: EdgeDataset, standardizer: Standardizer | None, standardize: bool) -> Standardizer:
    if standardizer is not None:
        return standardizer
    return Standardizer().fit(*data.features) if standardize else Standardizer()


def _checkpoint(kind, model_config, params, standardizer, config, trace, steps) -> Checkpoint:
    meta = {"seed": config.seed, "epoch": len(trace), "steps": steps,
            "loss": trace[-1] if trace else None, "mode": config.mode}
    stats = standardizer.to_dict() if standardizer.fitted else None
    return Checkpoint(kind, model_config.to_dict(), params.copy(), stats, meta)


def pretrain_loop(dataset: EdgeDataset, model_config: ModelConfig, config: TrainConfig, *,
                  params: ParamStore | None = None, standardizer: Standardizer | None = None,
                  standardize: bool = True) -> TrainResult:
    """Masked reconstruction training on (typically unlabeled) edges.

    Each batch draws fresh masks from the loop's seeded stream.
    """
    if len(dataset) == 0:
        raise ValidationError("pre-training dataset is empty")
    standardizer = _fit_standardizer(dataset, standardizer, standardize)
    xh, xr, xt = standardizer.transform(*dataset.features)
    params = params.copy() if params is not None else init_mae_params(model_config, init_rng(config.seed))
    ratio = model_config.mask_ratio

    def batch_loss(p, idx, rng):
        masks = sample_masks(len(idx), ratio, rng)
        return mae_forward(xh[idx], xr[idx], xt[idx], masks, p, model_config, rng=rng, training=True).loss

    trace, steps, state = run_epochs(params, len(dataset), batch_loss, config, np.random.default_rng(config.seed))
    ckpt = _checkpoint("edge_mae", model_config, params, standardizer, config, trace, steps)
    return TrainResult(params, trace, steps, state, ckpt)


def _binary_labels(dataset: EdgeDataset) -> np.ndarray:
    if len(dataset) == 0:
        raise ValidationError("training dataset is empty")
    if (dataset.label == UNLABELED).any():
        raise ValidationError(f"{int((dataset.label == UNLABELED).sum())} unlabeled edges in a labeled training set")
    return dataset.label.astype(np.float64)


def finetune_loop(dataset: EdgeDataset, model_config: ModelConfig, config: TrainConfig, *,
                  init: ParamStore | None = None, standardizer: Standardizer | None = None,
                  standardize: bool = True) -> TrainResult:
    """BCE training of the whole Edge Transformer (nothing frozen).

    ``init`` is typically :func:`~edgeformer.mae.transfer_encoder` output;
    pass the pre-training ``standardizer`` alongside it.
    """
    y = _binary_labels(dataset)
    standardizer = _fit_standardizer(dataset, standardizer, standardize)
    xh, xr, xt = standardizer.transform(*dataset.features)
    params = init.copy() if init is not None else init_edge_transformer(model_config, init_rng(config.seed))

    def batch_loss(p, idx, rng):
        logits = edge_logits(xh[idx], xr[idx], xt[idx], p, model_config, rng=rng, training=True)
        return ad.bce_with_logits(logits, y[idx])

    trace, steps, state = run_epochs(params, len(dataset), batch_loss, config, np.random.default_rng(config.seed))
    ckpt = _checkpoint("edge_transformer", model_config, params, standardizer, config, trace, steps)
    return TrainResult(params, trace, steps, state, ckpt)


def baseline_loop(name: str, dataset: EdgeDataset, model_config: ModelConfig, config: TrainConfig, *,
                  init: ParamStore | None = None, standardizer: Standardizer | None = None,
                  standardize: bool = True) -> TrainResult:
    """Same loss and optimiser as fine-tuning, applied to a baseline scorer."""
    y = _binary_labels(dataset)
    standardizer = _fit_standardizer(dataset, standardizer, standardize)
    xh, xr, xt = standardizer.transform(*dataset.features)
    params = init.copy() if init is not None else init_baseline(name, model_config, init_rng(config.seed))

    def batch_loss(p, idx, rng):
        return ad.bce_with_logits(baseline_logits(name, xh[idx], xr[idx], xt[idx], p, model_config), y[idx])

    trace, steps, state = run_epochs(params, len(dataset), batch_loss, config, np.random.default_rng(config.seed))
    ckpt = _checkpoint(name, model_config, params, standardizer, config, trace, steps)
    return TrainResult(params, trace, steps, state, ckpt)

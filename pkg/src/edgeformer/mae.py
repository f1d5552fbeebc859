"""Masked-autoencoder pre-training for the Edge Transformer encoder.

One of the three edge tokens (at the default ratio) is hidden, the encoder
sees CLS plus the visible tokens, and a one-layer decoder fed with the
encoded tokens and a shared mask token rebuilds the hidden feature vectors.
Only masked slots contribute to the loss.

Decoder-side parameters live under ``decoder.``::

    decoder.mask_token                 [D]
    decoder.pos                        [4, D]
    decoder.layers.{i}.*               same layout as encoder layers
    decoder.proj.{head,edge,tail}.{weight,bias}   D -> feature width

Everything else uses exactly the Edge Transformer names, which is what makes
:func:`transfer_encoder` a plain copy.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import TransferError, ValidationError
from .params import ParamStore
from .transformer import (
    FEATURE_BLOCKS,
    add_transformer_layers,
    embed_tokens,
    encoder_forward,
    encoder_param_names,
    init_classifier_head,
    init_encoder,
)

logger = logging.getLogger(__name__)

DECODER_PREFIX = "decoder."


@dataclass(frozen=True)
class MaskPlan:
    """Which of the (head, edge, tail) tokens are hidden. CLS is never masked."""

    masked: tuple[bool, bool, bool]
    seed: int | None = None

    @property
    def n_masked(self) -> int:
        return int(sum(self.masked))

    @property
    def visible_slots(self) -> tuple[int, ...]:
        """Sequence positions fed to the encoder, CLS first."""
        return (0,) + tuple(i + 1 for i, m in enumerate(self.masked) if not m)


def n_masked_tokens(mask_ratio: float) -> int:
    """``round(ratio * 3)`` with halves rounded up, clamped to at least one."""
    if not 0.0 < mask_ratio < 1.0:
        raise ValidationError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    k = int(math.floor(mask_ratio * 3 + 0.5))
    if k == 0:
        logger.warning("mask ratio %.4g masks no tokens; clamping to one", mask_ratio)
        k = 1
    return k


def sample_masks(n: int, mask_ratio: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean ``[n, 3]`` masks, each row hiding ``n_masked_tokens`` tokens
    chosen uniformly without replacement."""
    k = n_masked_tokens(mask_ratio)
    order = np.argsort(rng.random((n, 3)), axis=1, kind="stable")
    masks = np.zeros((n, 3), dtype=bool)
    np.put_along_axis(masks, order[:, :k], True, axis=1)
    return masks


def sample_mask(mask_ratio: float, rng: np.random.Generator, seed: int | None = None) -> MaskPlan:
    row = sample_masks(1, mask_ratio, rng)[0]
    return MaskPlan(tuple(bool(m) for m in row), seed)


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------

def init_mae_params(config: ModelConfig, rng: np.random.Generator | int = 0) -> ParamStore:
    rng = np.random.default_rng(rng)
    store = init_encoder(config, rng)
    D, std = config.d_model, config.init_std
    store.add("decoder.mask_token", rng.normal(0.0, std, size=D))
    store.add("decoder.pos", rng.normal(0.0, std, size=(4, D)))
    add_transformer_layers(store, "decoder", config.n_decoder_layers, config, rng)
    for block, width in zip(FEATURE_BLOCKS, config.feature_widths):
        store.add(f"decoder.proj.{block}.weight", rng.normal(0.0, std, size=(D, width)))
        store.add(f"decoder.proj.{block}.bias", np.zeros(width))
    return store


def transfer_encoder(pretrained: ParamStore, config: ModelConfig,
                     rng: np.random.Generator | int = 0) -> ParamStore:
    """Fresh Edge Transformer store whose encoder side is copied bit for bit
    from ``pretrained``; the classifier head is newly initialised."""
    expected = encoder_param_names(config)
    available = [n for n in pretrained.names() if not n.startswith(DECODER_PREFIX)]
    missing = [n for n in expected if n not in pretrained]
    extra = [n for n in available if n not in set(expected)]
    if missing or extra:
        raise TransferError(f"encoder layout mismatch: missing={missing} extra={extra}")
    reference = init_encoder(config, np.random.default_rng(0))
    bad_shapes = [n for n in expected if pretrained[n].shape != reference[n].shape]
    if bad_shapes:
        raise TransferError(f"encoder layout mismatch: wrong shapes for {bad_shapes}")
    store = pretrained.subset(expected)
    init_classifier_head(store, config, np.random.default_rng(rng))
    return store


# ---------------------------------------------------------------------------
# forward pass and loss
# ---------------------------------------------------------------------------

@dataclass
class MaeOutput:
    loss: Tensor
    reconstructions: dict[str, Tensor]
    encoder_input: Tensor
    decoder_input: Tensor


def mae_forward(x_head, x_edge, x_tail, masks, p, config: ModelConfig, *,
                targets=None, rng=None, training: bool = False) -> MaeOutput:
    """Batched MAE pass. ``masks`` is boolean ``[B, 3]`` with the same number
    of hidden tokens in every row; ``targets`` defaults to the inputs.

    The loss is the mean over edges of the per-edge MSE, where each edge's
    MSE averages over every feature value of its masked tokens.
    """
    masks = np.atleast_2d(np.asarray(masks, dtype=bool))
    x_head, x_edge, x_tail = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (x_head, x_edge, x_tail))
    batch = x_head.shape[0]
    if masks.shape != (batch, 3):
        raise ValidationError(f"masks must have shape ({batch}, 3), got {masks.shape}")
    counts = masks.sum(axis=1)
    if counts.min() < 1 or counts.min() != counts.max():
        raise ValidationError("every edge needs the same, non-zero number of masked tokens")
    if targets is None:
        targets = (x_head, x_edge, x_tail)
    targets = [np.atleast_2d(np.asarray(t, dtype=np.float64)) for t in targets]

    tokens = embed_tokens(x_head, x_edge, x_tail, p, config)
    tokens = ad.dropout(tokens, config.dropout, rng, training)
    slot_mask = np.concatenate([np.zeros((batch, 1), dtype=bool), masks], axis=1)
    # stable argsort puts visible slots first, in order, with CLS (slot 0) leading
    visible = np.argsort(slot_mask, axis=1, kind="stable")[:, : 4 - int(counts[0])]
    encoder_input = ad.gather_rows(tokens, visible)
    encoded = encoder_forward(encoder_input, p, config, rng=rng, training=training)

    mask_fill = ad.mul(slot_mask[:, :, None].astype(np.float64), p["decoder.mask_token"])
    decoder_input = ad.add(ad.add(ad.scatter_rows(encoded, visible, 4), mask_fill), p["decoder.pos"])
    decoded = encoder_forward(decoder_input, p, config, prefix="decoder",
                              n_layers=config.n_decoder_layers, rng=rng, training=training)

    widths = np.array(config.feature_widths, dtype=np.float64)
    per_edge_count = (masks * widths).sum(axis=1)
    loss = None
    recons = {}
    for j, block in enumerate(FEATURE_BLOCKS):
        recon = ad.affine(decoded[:, j + 1, :], p[f"decoder.proj.{block}.weight"],
                          p[f"decoder.proj.{block}.bias"])
        recons[block] = recon
        weight = masks[:, j] / per_edge_count / batch
        if not weight.any():
            continue
        diff = ad.sub(recon, targets[j])
        term = ad.sum(ad.mul(ad.sum(ad.mul(diff, diff), axis=1), weight))
        loss = term if loss is None else ad.add(loss, term)
    return MaeOutput(loss, recons, encoder_input, decoder_input)


def mae_forward_loss(edge, plan: MaskPlan, p, config: ModelConfig, *, targets=None) -> Tensor:
    """Reconstruction loss for one edge under one mask plan."""
    if targets is not None:
        targets = tuple(np.asarray(t)[None, :] for t in targets)
    out = mae_forward(edge.x_head[None, :], edge.x_edge[None, :], edge.x_tail[None, :],
                      np.array([plan.masked]), p, config, targets=targets)
    return out.loss

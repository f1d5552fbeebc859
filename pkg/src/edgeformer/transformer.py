"""Edge Transformer: three embedding MLPs, a CLS token, learned position
embeddings, a post-norm Transformer encoder and a linear classification head.

Parameter names (all live in one :class:`ParamStore`)::

    embed.{head,edge,tail}.fc1.{weight,bias}   input width -> D, ReLU
    embed.{head,edge,tail}.fc2.{weight,bias}   D -> D
    cls                                        [D]
    pos                                        [4, D] (CLS, head, edge, tail)
    encoder.layers.{i}.attn.{q,k,v,o}.{weight,bias}
    encoder.layers.{i}.ln1.{gamma,beta}
    encoder.layers.{i}.ffn.fc1.{weight,bias}   D -> ffn_dim, GELU
    encoder.layers.{i}.ffn.fc2.{weight,bias}   ffn_dim -> D
    encoder.layers.{i}.ln2.{gamma,beta}
    classifier.{weight,bias}                   D -> 1

The parameter count is therefore::

    (d_h + d_r + d_t) * D + 3 * (D*D + 2*D)                 embedding MLPs
    + D + 4*D                                              CLS + positions
    + L * (4*(D*D + D) + 2*D*F + F + D + 4*D)              encoder layers
    + D + 1                                                classifier

with ``L`` encoder layers and FFN width ``F`` (see :func:`param_count`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import ConfigurationError, ValidationError
from .params import ParamStore

TOKEN_ORDER = ("cls", "head", "edge", "tail")
FEATURE_BLOCKS = ("head", "edge", "tail")


@dataclass(frozen=True)
class TokenSequence:
    """Embedded edge: rows are ``[CLS, H_h, H_r, H_t]`` in that order."""

    tokens: Tensor
    positions: tuple[int, ...] = (0, 1, 2, 3)


# ---------------------------------------------------------------------------
# initialisation
# ---------------------------------------------------------------------------

def _normal(rng, shape, std):
    return rng.normal(0.0, std, size=shape)


def _add_mlp(store: ParamStore, prefix: str, n_in: int, d: int, rng, std: float) -> None:
    store.add(f"{prefix}.fc1.weight", _normal(rng, (n_in, d), std))
    store.add(f"{prefix}.fc1.bias", np.zeros(d))
    store.add(f"{prefix}.fc2.weight", _normal(rng, (d, d), std))
    store.add(f"{prefix}.fc2.bias", np.zeros(d))


def add_transformer_layers(store: ParamStore, prefix: str, n_layers: int, config: ModelConfig, rng) -> None:
    D, F, std = config.d_model, config.ffn_dim, config.init_std
    for i in range(n_layers):
        p = f"{prefix}.layers.{i}"
        for proj in ("q", "k", "v", "o"):
            store.add(f"{p}.attn.{proj}.weight", _normal(rng, (D, D), std))
            store.add(f"{p}.attn.{proj}.bias", np.zeros(D))
        store.add(f"{p}.ln1.gamma", np.ones(D))
        store.add(f"{p}.ln1.beta", np.zeros(D))
        store.add(f"{p}.ffn.fc1.weight", _normal(rng, (D, F), std))
        store.add(f"{p}.ffn.fc1.bias", np.zeros(F))
        store.add(f"{p}.ffn.fc2.weight", _normal(rng, (F, D), std))
        store.add(f"{p}.ffn.fc2.bias", np.zeros(D))
        store.add(f"{p}.ln2.gamma", np.ones(D))
        store.add(f"{p}.ln2.beta", np.zeros(D))


def init_encoder(config: ModelConfig, rng: np.random.Generator) -> ParamStore:
    """Embedding MLPs, CLS, positions and encoder layers (no classifier)."""
    D, std = config.d_model, config.init_std
    store = ParamStore()
    for block, width in zip(FEATURE_BLOCKS, config.feature_widths):
        _add_mlp(store, f"embed.{block}", width, D, rng, std)
    store.add("cls", _normal(rng, (D,), std))
    store.add("pos", _normal(rng, (4, D), std))
    add_transformer_layers(store, "encoder", config.n_encoder_layers, config, rng)
    return store


def init_classifier_head(store: ParamStore, config: ModelConfig, rng: np.random.Generator) -> None:
    store.add("classifier.weight", _normal(rng, (config.d_model, 1), config.init_std))
    store.add("classifier.bias", np.zeros(1))


def init_edge_transformer(config: ModelConfig, rng: np.random.Generator | int = 0) -> ParamStore:
    rng = np.random.default_rng(rng)
    store = init_encoder(config, rng)
    init_classifier_head(store, config, rng)
    return store


def encoder_param_names(config: ModelConfig) -> list[str]:
    """Names shared between the Edge Transformer and the MAE encoder."""
    return init_encoder(config, np.random.default_rng(0)).names()


def param_count(config: ModelConfig) -> int:
    D, F, L = config.d_model, config.ffn_dim, config.n_encoder_layers
    embed = sum(config.feature_widths) * D + 3 * (D * D + 2 * D)
    tokens = D + 4 * D
    layer = 4 * (D * D + D) + 2 * D * F + F + D + 4 * D
    return embed + tokens + L * layer + D + 1


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------

def mlp(x, p, prefix: str) -> Tensor:
    hidden = ad.relu(ad.affine(x, p[f"{prefix}.fc1.weight"], p[f"{prefix}.fc1.bias"]))
    return ad.affine(hidden, p[f"{prefix}.fc2.weight"], p[f"{prefix}.fc2.bias"])


def check_feature_widths(x_head, x_edge, x_tail, config: ModelConfig) -> None:
    for name, x, width in zip(("x_head", "x_edge", "x_tail"), (x_head, x_edge, x_tail),
                              config.feature_widths):
        if np.shape(x)[-1] != width:
            raise ValidationError(f"{name} has width {np.shape(x)[-1]}, config expects {width}")


def embed_tokens(x_head, x_edge, x_tail, p, config: ModelConfig) -> Tensor:
    """Batched token embedding: feature blocks ``[B, d]`` -> tokens ``[B, 4, D]``."""
    check_feature_widths(x_head, x_edge, x_tail, config)
    x_head, x_edge, x_tail = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (x_head, x_edge, x_tail))
    batch = x_head.shape[0]
    pos = p["pos"]
    cls = ad.broadcast_to(ad.add(p["cls"], pos[0]), (batch, config.d_model))
    rows = [cls]
    for i, (block, x) in enumerate(zip(FEATURE_BLOCKS, (x_head, x_edge, x_tail)), start=1):
        rows.append(ad.add(mlp(x, p, f"embed.{block}"), pos[i]))
    return ad.stack(rows, axis=1)


def embed_edge(edge, p, config: ModelConfig) -> TokenSequence:
    """Embed a single :class:`~edgeformer.data.EdgeRecord` into a ``[4, D]`` sequence."""
    tokens = embed_tokens(edge.x_head[None, :], edge.x_edge[None, :], edge.x_tail[None, :], p, config)
    return TokenSequence(ad.reshape(tokens, (4, config.d_model)))


def multi_head_attention(x, p, prefix: str, n_heads: int) -> Tensor:
    """Scaled dot-product self-attention over ``[..., S, D]`` (one or two leading dims)."""
    x = ad.as_tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = ad.reshape(x, (1,) + x.shape)
    batch, seq, d = x.shape
    if d % n_heads:
        raise ConfigurationError(f"width {d} is not divisible by {n_heads} heads")
    dh = d // n_heads

    def split(t):
        return ad.transpose(ad.reshape(t, (batch, seq, n_heads, dh)), (0, 2, 1, 3))

    q = split(ad.affine(x, p[f"{prefix}.q.weight"], p[f"{prefix}.q.bias"]))
    k = split(ad.affine(x, p[f"{prefix}.k.weight"], p[f"{prefix}.k.bias"]))
    v = split(ad.affine(x, p[f"{prefix}.v.weight"], p[f"{prefix}.v.bias"]))
    scores = ad.mul(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    context = ad.matmul(ad.softmax_rows(scores), v)
    merged = ad.reshape(ad.transpose(context, (0, 2, 1, 3)), (batch, seq, d))
    out = ad.affine(merged, p[f"{prefix}.o.weight"], p[f"{prefix}.o.bias"])
    return ad.reshape(out, (seq, d)) if squeeze else out


def transformer_layer(x, p, prefix: str, config: ModelConfig, rng=None, training: bool = False) -> Tensor:
    eps, drop = config.layer_norm_eps, config.dropout
    attn = multi_head_attention(x, p, f"{prefix}.attn", config.n_heads)
    h = ad.layer_norm(ad.add(x, ad.dropout(attn, drop, rng, training)),
                      p[f"{prefix}.ln1.gamma"], p[f"{prefix}.ln1.beta"], eps)
    ff = ad.gelu(ad.affine(h, p[f"{prefix}.ffn.fc1.weight"], p[f"{prefix}.ffn.fc1.bias"]))
    ff = ad.affine(ff, p[f"{prefix}.ffn.fc2.weight"], p[f"{prefix}.ffn.fc2.bias"])
    return ad.layer_norm(ad.add(h, ad.dropout(ff, drop, rng, training)),
                         p[f"{prefix}.ln2.gamma"], p[f"{prefix}.ln2.beta"], eps)


def encoder_forward(tokens, p, config: ModelConfig, *, prefix: str = "encoder",
                    n_layers: int | None = None, rng=None, training: bool = False) -> Tensor:
    """Run the layer stack; returns every final hidden state, CLS included."""
    x = tokens.tokens if isinstance(tokens, TokenSequence) else ad.as_tensor(tokens)
    n_layers = config.n_encoder_layers if n_layers is None else n_layers
    for i in range(n_layers):
        x = transformer_layer(x, p, f"{prefix}.layers.{i}", config, rng, training)
    return x


def edge_logits(x_head, x_edge, x_tail, p, config: ModelConfig, *, rng=None, training: bool = False) -> Tensor:
    """Classification logits ``[B]`` for a batch of edges."""
    tokens = embed_tokens(x_head, x_edge, x_tail, p, config)
    tokens = ad.dropout(tokens, config.dropout, rng, training)
    hidden = encoder_forward(tokens, p, config, rng=rng, training=training)
    cls_state = hidden[:, 0, :]
    logit = ad.affine(cls_state, p["classifier.weight"], p["classifier.bias"])
    return ad.reshape(logit, (logit.shape[0],))


def cls_representation(x_head, x_edge, x_tail, p, config: ModelConfig) -> np.ndarray:
    """Final CLS hidden state for each edge, ``[B, D]`` (inference only)."""
    tokens = embed_tokens(x_head, x_edge, x_tail, p, config)
    return encoder_forward(tokens, p, config)[:, 0, :].data.copy()


def classify_edge(edge, p, config: ModelConfig) -> tuple[float, float]:
    """``(logit, probability)`` for one edge."""
    logit = edge_logits(edge.x_head[None, :], edge.x_edge[None, :], edge.x_tail[None, :], p, config).item()
    return logit, float(ad.sigmoid(logit))


def predict_logits(x_head, x_edge, x_tail, params: ParamStore, config: ModelConfig,
                   batch_size: int = 4096) -> np.ndarray:
    """Inference over a frozen store, chunked to bound memory."""
    leaves = params.leaves(requires_grad=False)
    n = np.shape(x_head)[0]
    out = np.empty(n)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = edge_logits(x_head[sl], x_edge[sl], x_tail[sl], leaves, config).data
    return out

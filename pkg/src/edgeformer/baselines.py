"""Comparison scorers: intimacy ordering, Edge MLP and four knowledge-graph
style scorers (Bilinear, DistMult, TransE, ConvKB).

The learned scorers each own three embedding MLPs (same shape as the Edge
Transformer's) that turn ``X_h, X_r, X_t`` into ``E_h, E_r, E_t`` of width
D. For Bilinear the edge features join the head MLP input, so the form
itself stays ``E_h^T W E_t + b``. TransE and DistMult get one learned
scalar offset so their scores can act as BCE logits; ranking is unaffected.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .exceptions import ConfigurationError
from .params import ParamStore
from .transformer import _add_mlp, check_feature_widths, mlp

BASELINES = ("edge_mlp", "bilinear", "distmult", "transe", "convkb")
CONVKB_FILTERS = 8


# ---------------------------------------------------------------------------
# intimacy ranking
# ---------------------------------------------------------------------------

def intimacy_rank(candidates: Sequence, intimacy_index: int | None = 0) -> list:
    """Order one head's candidates by descending intimacy, then tail id."""
    if intimacy_index is None:
        raise ConfigurationError("no intimacy column designated for this dataset")
    if not candidates:
        return []
    if intimacy_index >= len(candidates[0].x_edge):
        raise ConfigurationError(f"intimacy column {intimacy_index} missing from edge features")
    return sorted(candidates, key=lambda e: (-float(e.x_edge[intimacy_index]), e.tail_id))


def intimacy_scores(x_edge: np.ndarray, intimacy_index: int = 0) -> np.ndarray:
    x_edge = np.asarray(x_edge)
    if x_edge.ndim != 2 or intimacy_index >= x_edge.shape[1]:
        raise ConfigurationError(f"intimacy column {intimacy_index} missing from edge features")
    return x_edge[:, intimacy_index].astype(np.float64)


# ---------------------------------------------------------------------------
# scoring functions (batched over leading axes)
# ---------------------------------------------------------------------------

def transe_score(e_head, e_edge, e_tail) -> Tensor:
    return ad.mul(ad.l2norm(ad.sub(ad.add(e_head, e_edge), e_tail), axis=-1), -1.0)


def distmult_score(e_head, e_edge, e_tail) -> Tensor:
    # head*tail first keeps the head/tail swap exact in floating point
    return ad.sum(ad.mul(ad.mul(e_head, e_tail), e_edge), axis=-1)


def bilinear_score(e_head, e_tail, W, b) -> Tensor:
    e_head = ad.as_tensor(e_head)
    if e_head.ndim == 1:
        projected = ad.reshape(ad.matmul(ad.reshape(e_head, (1, -1)), W), (-1,))
    else:
        projected = ad.matmul(e_head, W)
    return ad.add(ad.sum(ad.mul(projected, e_tail), axis=-1), b)


def convkb_score(e_head, e_edge, e_tail, filters, filter_bias, dense_weight, dense_bias) -> Tensor:
    """1x3 filters slide down the rows of ``[E_h | E_r | E_t]`` (D x 3); the
    ReLU feature maps (D x F) are flattened row-major into a dense layer."""
    m = ad.stack([e_head, e_edge, e_tail], axis=-1)                  # [..., D, 3]
    maps = ad.relu(ad.affine(m, ad.transpose(filters, (1, 0)), filter_bias))  # [..., D, F]
    lead = maps.shape[:-2]
    flat = ad.reshape(maps, lead + (maps.shape[-2] * maps.shape[-1],))
    out = ad.affine(flat, dense_weight, dense_bias)
    return ad.reshape(out, lead)


def edge_mlp_score(x, p) -> Tensor:
    """Two hidden ReLU layers over the concatenated features."""
    h = ad.relu(ad.affine(x, p["mlp.fc1.weight"], p["mlp.fc1.bias"]))
    h = ad.relu(ad.affine(h, p["mlp.fc2.weight"], p["mlp.fc2.bias"]))
    out = ad.affine(h, p["mlp.out.weight"], p["mlp.out.bias"])
    return ad.reshape(out, out.shape[:-1])


# ---------------------------------------------------------------------------
# trainable pipelines
# ---------------------------------------------------------------------------

def init_baseline(name: str, config: ModelConfig, rng: np.random.Generator | int = 0) -> ParamStore:
    if name not in BASELINES:
        raise ConfigurationError(f"unknown baseline {name!r}; choose from {BASELINES}")
    rng = np.random.default_rng(rng)
    D, std = config.d_model, config.init_std
    dh, dr, dt = config.feature_widths
    store = ParamStore()
    if name == "edge_mlp":
        store.add("mlp.fc1.weight", rng.normal(0, std, (dh + dr + dt, D)))
        store.add("mlp.fc1.bias", np.zeros(D))
        store.add("mlp.fc2.weight", rng.normal(0, std, (D, D)))
        store.add("mlp.fc2.bias", np.zeros(D))
        store.add("mlp.out.weight", rng.normal(0, std, (D, 1)))
        store.add("mlp.out.bias", np.zeros(1))
        return store
    head_in = dh + dr if name == "bilinear" else dh
    _add_mlp(store, "embed.head", head_in, D, rng, std)
    if name != "bilinear":
        _add_mlp(store, "embed.edge", dr, D, rng, std)
    _add_mlp(store, "embed.tail", dt, D, rng, std)
    if name == "bilinear":
        store.add("bilinear.weight", rng.normal(0, std, (D, D)))
        store.add("bilinear.bias", np.zeros(()))
    elif name == "convkb":
        store.add("convkb.filters", rng.normal(0, std, (CONVKB_FILTERS, 3)))
        store.add("convkb.filter_bias", np.zeros(CONVKB_FILTERS))
        store.add("convkb.dense.weight", rng.normal(0, std, (D * CONVKB_FILTERS, 1)))
        store.add("convkb.dense.bias", np.zeros(1))
    else:
        store.add("score.bias", np.zeros(()))
    return store


def triple_embedding(name: str, x_head, x_edge, x_tail, p) -> tuple[Tensor, Tensor | None, Tensor]:
    if name == "bilinear":
        e_head = mlp(np.hstack([x_head, x_edge]), p, "embed.head")
        return e_head, None, mlp(x_tail, p, "embed.tail")
    return mlp(x_head, p, "embed.head"), mlp(x_edge, p, "embed.edge"), mlp(x_tail, p, "embed.tail")


def baseline_logits(name: str, x_head, x_edge, x_tail, p, config: ModelConfig) -> Tensor:
    """Scores ``[B]`` of a learned baseline, used directly as BCE logits."""
    check_feature_widths(x_head, x_edge, x_tail, config)
    x_head, x_edge, x_tail = (np.atleast_2d(np.asarray(x, dtype=np.float64)) for x in (x_head, x_edge, x_tail))
    if name == "edge_mlp":
        return edge_mlp_score(np.hstack([x_head, x_edge, x_tail]), p)
    if name not in BASELINES:
        raise ConfigurationError(f"unknown baseline {name!r}; choose from {BASELINES}")
    e_head, e_edge, e_tail = triple_embedding(name, x_head, x_edge, x_tail, p)
    if name == "bilinear":
        return bilinear_score(e_head, e_tail, p["bilinear.weight"], p["bilinear.bias"])
    if name == "convkb":
        return convkb_score(e_head, e_edge, e_tail, p["convkb.filters"], p["convkb.filter_bias"],
                            p["convkb.dense.weight"], p["convkb.dense.bias"])
    score = transe_score(e_head, e_edge, e_tail) if name == "transe" else distmult_score(e_head, e_edge, e_tail)
    return ad.add(score, p["score.bias"])


def predict_baseline(name: str, x_head, x_edge, x_tail, params: ParamStore, config: ModelConfig,
                     batch_size: int = 4096) -> np.ndarray:
    leaves = params.leaves(requires_grad=False)
    n = np.shape(x_head)[0]
    out = np.empty(n)
    for start in range(0, n, batch_size):
        sl = slice(start, start + batch_size)
        out[sl] = baseline_logits(name, x_head[sl], x_edge[sl], x_tail[sl], leaves, config).data
    return out

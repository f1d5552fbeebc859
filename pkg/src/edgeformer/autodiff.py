"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation used by the models is defined here as a function that
returns a new :class:`Tensor` and, when any input requires a gradient,
records a closure that maps the output gradient to input gradients.
Leading dimensions are treated as batch dimensions throughout, so the
same ops serve single edges (``[4, D]``) and mini-batches (``[B, 4, D]``).
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erf

from .exceptions import DimensionError, NonDeterministicError, NonFiniteError, ValidationError

_SQRT2 = math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Tensor:
    """An immutable array plus the bookkeeping needed for backward.

    ``grad`` reads as zeros of the value's shape until backward has
    accumulated something into it, and is ``None`` for constants.
    """

    __slots__ = ("data", "_grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 _parents: tuple = (), _backward: Callable | None = None):
        arr = np.asarray(data, dtype=np.float64).view()
        arr.flags.writeable = False
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad: np.ndarray | None = None
        self.op = op
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def numpy(self) -> np.ndarray:
        return self.data

    @property
    def grad(self) -> np.ndarray | None:
        if not self.requires_grad:
            return None
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable ``grad``.

        Without an explicit seed, ``self`` must be a scalar.
        """
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        if not self.requires_grad:
            return
        order = _topological_order(self)
        _accumulate(self, np.asarray(grad, dtype=np.float64).reshape(self.shape))
        for node in reversed(order):
            if node._backward is None or node._grad is None:
                continue
            parent_grads = node._backward(node._grad)
            for parent, g in zip(node._parents, parent_grads):
                if g is not None and parent.requires_grad:
                    _accumulate(parent, g)

    # operator sugar for the handful of elementwise ops the models use
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = np.asarray(g, dtype=np.float64)
    if g.shape != t.shape:
        g = np.broadcast_to(g, t.shape)
    t._grad = g.copy() if t._grad is None else t._grad + g


def _raise_item(t: Tensor) -> float:
    raise ValueError(f"item() needs a single-element tensor, got shape {t.shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by {op}")
    needs_grad = any(p.requires_grad for p in parents)
    if needs_grad:
        return Tensor(data, True, op=op, _parents=tuple(parents), _backward=backward)
    return Tensor(data, False, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data
    return _result(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(out, (a, b), backward, "mul")


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    return _result(out, (x,), lambda g: (g * (x.data > 0),), "relu")


def gelu(x) -> Tensor:
    """GELU with the exact normal CDF, ``x * Phi(x)``."""
    x = as_tensor(x)
    cdf = 0.5 * (1.0 + erf(x.data / _SQRT2))
    out = x.data * cdf

    def backward(g):
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x.data * x.data)
        return (g * (cdf + x.data * pdf),)

    return _result(out, (x,), backward, "gelu")


def dropout(x, p: float, rng: np.random.Generator | None, training: bool = True) -> Tensor:
    """Inverted dropout; the identity when ``p == 0`` or not training."""
    x = as_tensor(x)
    if not training or p == 0.0:
        return x
    if not 0.0 <= p < 1.0:
        raise ValidationError(f"dropout rate must lie in [0, 1), got {p}")
    if rng is None:
        raise ValidationError("dropout with p > 0 needs an rng")
    keep = (rng.random(x.shape) >= p) / (1.0 - p)
    return mul(x, keep)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b) -> Tensor:
    """Batched matrix product over the last two axes (numpy semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _result(out, (a, b), backward, "matmul")


def affine(x, W, b) -> Tensor:
    """``x @ W + b`` over the last axis of ``x``; leading axes are batch axes."""
    x, W, b = as_tensor(x), as_tensor(W), as_tensor(b)
    if W.ndim != 2 or x.ndim < 1 or x.shape[-1] != W.shape[0]:
        raise DimensionError(f"affine shape mismatch: x{x.shape} @ W{W.shape}")
    if b.shape != (W.shape[1],):
        raise DimensionError(f"affine bias shape {b.shape} does not match W{W.shape}")
    flat_x = x.data.reshape(-1, W.shape[0])
    out = (flat_x @ W.data + b.data).reshape(x.shape[:-1] + (W.shape[1],))

    def backward(g):
        flat_g = g.reshape(-1, W.shape[1])
        gx = (flat_g @ W.data.T).reshape(x.shape) if x.requires_grad else None
        gW = flat_x.T @ flat_g if W.requires_grad else None
        gb = flat_g.sum(axis=0) if b.requires_grad else None
        return gx, gW, gb

    return _result(out, (x, W, b), backward, "affine")


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def sum(x, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001 - mirrors numpy
    x = as_tensor(x)
    out = np.sum(x.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _result(np.asarray(out), (x,), backward, "sum")


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / float(count))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    return _result(out, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x, axes: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)
    return _result(out, (x,), lambda g: (np.transpose(g, inverse),), "transpose")


def broadcast_to(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    out = np.broadcast_to(x.data, tuple(shape))
    return _result(out, (x,), lambda g: (_unbroadcast(g, x.shape),), "broadcast_to")


def getitem(x, index) -> Tensor:
    x = as_tensor(x)
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _result(out, (x,), backward, "getitem")


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise DimensionError(f"stack needs equal shapes, got {sorted(shapes)}")
    out = np.stack([t.data for t in ts], axis=axis)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(ts)))

    return _result(out, ts, backward, "stack")


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _result(out, ts, backward, "concat")


def gather_rows(x, index: np.ndarray) -> Tensor:
    """Select rows per batch element: ``out[b, j] = x[b, index[b, j]]``.

    ``x`` has shape ``[B, S, D]`` and ``index`` integer shape ``[B, K]``.
    """
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 3 or index.ndim != 2 or index.shape[0] != x.shape[0]:
        raise DimensionError(f"gather_rows needs x[B,S,D] and index[B,K], got {x.shape}, {index.shape}")
    out = np.take_along_axis(x.data, index[:, :, None], axis=1)

    def backward(g):
        full = np.zeros_like(x.data)
        # repeated indices must accumulate
        rows = np.arange(x.shape[0])[:, None]
        np.add.at(full, (rows, index), g)
        return (full,)

    return _result(out, (x,), backward, "gather_rows")


def scatter_rows(x, index: np.ndarray, size: int) -> Tensor:
    """Inverse of :func:`gather_rows`: place ``x[b, j]`` at row ``index[b, j]``
    of a zero ``[B, size, D]`` tensor. Indices within a row must be distinct."""
    x = as_tensor(x)
    index = np.asarray(index, dtype=np.intp)
    if x.ndim != 3 or index.shape != x.shape[:2]:
        raise DimensionError(f"scatter_rows needs x[B,K,D] and index[B,K], got {x.shape}, {index.shape}")
    out = np.zeros((x.shape[0], size, x.shape[2]))
    np.put_along_axis(out, index[:, :, None], x.data, axis=1)

    def backward(g):
        return (np.take_along_axis(g, index[:, :, None], axis=1),)

    return _result(out, (x,), backward, "scatter_rows")


# ---------------------------------------------------------------------------
# normalisation
# ---------------------------------------------------------------------------

def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, stabilised by subtracting the row max."""
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _result(out, (x,), backward, "softmax_rows")


def layer_norm(x, gamma, beta, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit (biased) variance,
    then scale by ``gamma`` and shift by ``beta``."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise DimensionError(f"layer_norm params {gamma.shape}/{beta.shape} do not match width {d}")
    if eps <= 0:
        raise ValidationError(f"layer_norm eps must be positive, got {eps}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gamma.data + beta.data

    def backward(g):
        gx = gg = gb = None
        if x.requires_grad:
            gxhat = g * gamma.data
            gx = inv_std * (gxhat - gxhat.mean(axis=-1, keepdims=True)
                            - xhat * (gxhat * xhat).mean(axis=-1, keepdims=True))
        if gamma.requires_grad:
            gg = (g * xhat).reshape(-1, d).sum(axis=0)
        if beta.requires_grad:
            gb = g.reshape(-1, d).sum(axis=0)
        return gx, gg, gb

    return _result(out, (x, gamma, beta), backward, "layer_norm")


def l2norm(x, axis: int = -1) -> Tensor:
    """Euclidean norm along ``axis``. The subgradient at zero is taken as 0."""
    x = as_tensor(x)
    out = np.sqrt((x.data * x.data).sum(axis=axis))

    def backward(g):
        denom = np.expand_dims(out, axis)
        safe = np.where(denom > 0, denom, 1.0)
        return (np.expand_dims(g, axis) * np.where(denom > 0, x.data / safe, 0.0),)

    return _result(out, (x,), backward, "l2norm")


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def bce_with_logits(logit, label) -> Tensor:
    """Mean binary cross-entropy of ``sigmoid(logit)`` against 0/1 labels.

    Uses ``max(z, 0) - z*y + log1p(exp(-|z|))`` so large logits never overflow.
    """
    logit = as_tensor(logit)
    y = np.asarray(label.data if isinstance(label, Tensor) else label, dtype=np.float64)
    if y.shape != logit.shape:
        raise DimensionError(f"logit shape {logit.shape} != label shape {y.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("bce_with_logits labels must be 0 or 1")
    z = logit.data
    n = max(z.size, 1)
    losses = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(losses.sum() / n)

    def backward(g):
        sig = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
        return (g * (sig - y) / n,)

    return _result(out, (logit,), backward, "bce_with_logits")


def mse_masked(pred, target, mask) -> Tensor:
    """Mean squared error over the rows selected by ``mask`` (all columns)."""
    pred = as_tensor(pred)
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
    if mask.shape != pred.shape[:1]:
        raise DimensionError(f"mask shape {mask.shape} does not match {pred.shape[0]} rows")
    if not mask.any():
        raise ValidationError("no masked tokens")
    weight = mask[:, None].astype(np.float64) * np.ones(pred.shape[1:])
    count = weight.sum()
    diff = pred.data - target
    out = np.asarray((weight * diff * diff).sum() / count)
    return _result(out, (pred,), lambda g: (g * 2.0 * weight * diff / count,), "mse_masked")


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function on plain arrays."""
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


# ---------------------------------------------------------------------------
# verification
# ---------------------------------------------------------------------------

def grad_check(f: Callable[[Mapping[str, Tensor]], Tensor], params, h: float = 1e-5,
               names: Iterable[str] | None = None) -> float:
    """Largest relative disagreement between backward and central differences.

    ``f`` maps a name->Tensor mapping to a scalar Tensor. The error for each
    entry is ``|analytic - numeric| / max(1, |numeric|)``. ``params`` is a
    :class:`~edgeformer.params.ParamStore` (or any name->array mapping) and
    is left unchanged.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ValidationError(f"finite-difference step must lie in [1e-6, 1e-4], got {h}")
    arrays = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    check = list(arrays) if names is None else list(names)

    def evaluate(values: Mapping[str, np.ndarray]) -> float:
        return float(f({k: Tensor(v) for k, v in values.items()}).data)

    leaves = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    loss = f(leaves)
    if loss.data.size != 1:
        raise ValidationError(f"grad_check needs a scalar function, got shape {loss.shape}")
    if evaluate(arrays) != float(loss.data) or evaluate(arrays) != float(loss.data):
        raise NonDeterministicError("two forward passes disagree; grad_check needs a deterministic f")
    loss.backward()

    worst = 0.0
    for name in check:
        base = arrays[name]
        analytic = leaves[name].grad.reshape(-1)
        flat = base.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = evaluate(arrays)
            flat[i] = orig - h
            down = evaluate(arrays)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst

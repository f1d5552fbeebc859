"""Edge datasets: records, a synthetic friend-recall generator, head-grouped
splits, CSV I/O and feature standardisation."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import sigmoid
from .exceptions import ParseError, SchemaError, ValidationError

POSITIVE, NEGATIVE, UNLABELED = 1, 0, -1
_LABEL_TOKENS = {"1": POSITIVE, "0": NEGATIVE, "-1": UNLABELED}


@dataclass(frozen=True)
class EdgeRecord:
    """One (active player, lost player) pair with its three feature blocks.

    ``x_edge[0]`` is the intimacy score. ``label`` is 1 (invited and
    returned), 0 (not returned / not invited) or -1 (head invited no one).
    """

    edge_id: int
    head_id: int
    tail_id: int
    label: int
    x_head: np.ndarray
    x_edge: np.ndarray
    x_tail: np.ndarray


def _as_block(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    # an empty selection keeps its column count
    width = x.shape[-1] if x.ndim == 2 else (x.size // n if n else 0)
    return x.reshape(n, width)


@dataclass
class EdgeDataset:
    """Column-oriented edge collection; every row shares the feature widths."""

    edge_id: np.ndarray
    head_id: np.ndarray
    tail_id: np.ndarray
    label: np.ndarray
    x_head: np.ndarray
    x_edge: np.ndarray
    x_tail: np.ndarray

    def __post_init__(self):
        self.edge_id = np.asarray(self.edge_id, dtype=np.int64)
        self.head_id = np.asarray(self.head_id, dtype=np.int64)
        self.tail_id = np.asarray(self.tail_id, dtype=np.int64)
        self.label = np.asarray(self.label, dtype=np.int64)
        n = len(self.edge_id)
        self.x_head, self.x_edge, self.x_tail = (
            _as_block(x, n) for x in (self.x_head, self.x_edge, self.x_tail))
        for name in ("head_id", "tail_id", "label"):
            if len(getattr(self, name)) != n:
                raise ValidationError(f"{name} has {len(getattr(self, name))} rows, expected {n}")
        if not np.isin(self.label, (POSITIVE, NEGATIVE, UNLABELED)).all():
            raise ValidationError("labels must be 1, 0 or -1")

    def __len__(self) -> int:
        return len(self.edge_id)

    def __getitem__(self, i: int) -> EdgeRecord:
        return EdgeRecord(int(self.edge_id[i]), int(self.head_id[i]), int(self.tail_id[i]),
                          int(self.label[i]), self.x_head[i], self.x_edge[i], self.x_tail[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def widths(self) -> tuple[int, int, int]:
        return self.x_head.shape[1], self.x_edge.shape[1], self.x_tail.shape[1]

    @property
    def features(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.x_head, self.x_edge, self.x_tail

    @property
    def X(self) -> np.ndarray:
        """Concatenated ``[x_head | x_edge | x_tail]`` matrix."""
        return np.hstack([self.x_head, self.x_edge, self.x_tail])

    def take(self, index) -> "EdgeDataset":
        index = np.asarray(index)
        if index.size == 0:
            index = index.astype(np.intp)
        return EdgeDataset(self.edge_id[index], self.head_id[index], self.tail_id[index], self.label[index],
                           self.x_head[index], self.x_edge[index], self.x_tail[index])

    def labeled(self) -> "EdgeDataset":
        return self.take(np.flatnonzero(self.label != UNLABELED))

    def unlabeled(self) -> "EdgeDataset":
        return self.take(np.flatnonzero(self.label == UNLABELED))

    @classmethod
    def from_records(cls, records: Sequence[EdgeRecord]) -> "EdgeDataset":
        if not records:
            raise ValidationError("cannot build a dataset from zero records")
        return cls([r.edge_id for r in records], [r.head_id for r in records], [r.tail_id for r in records],
                   [r.label for r in records], np.stack([r.x_head for r in records]),
                   np.stack([r.x_edge for r in records]), np.stack([r.x_tail for r in records]))

    @classmethod
    def concat(cls, parts: Iterable["EdgeDataset"]) -> "EdgeDataset":
        parts = list(parts)
        return cls(*(np.concatenate([getattr(p, f) for p in parts]) for f in
                     ("edge_id", "head_id", "tail_id", "label", "x_head", "x_edge", "x_tail")))

    def equals(self, other: "EdgeDataset") -> bool:
        return all(np.array_equal(getattr(self, f), getattr(other, f)) for f in
                   ("edge_id", "head_id", "tail_id", "label", "x_head", "x_edge", "x_tail"))


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """Shape and planted ground truth of a synthetic friend-recall dataset.

    ``candidates_per_head`` is either a fixed count or an inclusive
    ``(low, high)`` range sampled uniformly per head. When ``weights`` is
    None a planted vector is drawn from ``seed`` with norm ``signal``, and
    the intimacy weight is forced to ``+intimacy_weight``.

    ``latent_dim > 0`` switches from i.i.d. features to a latent-factor
    model: each head has a latent vector, each of its lost friends a
    latent correlated with it (``homophily``), features are noisy linear
    views of the latents, intimacy tracks latent similarity, and the
    planted weights act on the latent-driven part of the features. This
    gives the three tokens mutual information, which is what masked
    reconstruction can exploit.
    """

    n_head_nodes: int = 1000
    candidates_per_head: int | tuple[int, int] = 10
    dim_head_features: int = 16
    dim_edge_features: int = 4
    dim_tail_features: int = 16
    weights: tuple[float, ...] | None = None
    bias: float = -2.0
    signal: float = 2.5
    intimacy_weight: float = 0.75
    unlabeled_fraction: float = 0.0
    split_ratio: float = 0.8
    seed: int = 0
    latent_dim: int = 0
    homophily: float = 0.6
    feature_noise: float = 1.0

    def __post_init__(self):
        if self.n_head_nodes < 1:
            raise ValidationError("n_head_nodes must be positive")
        lo, hi = self.candidate_range
        if lo < 1 or hi < lo:
            raise ValidationError(f"invalid candidates_per_head {self.candidates_per_head!r}")
        if min(self.widths) < 1:
            raise ValidationError(f"feature widths must be >= 1, got {self.widths}")
        if not 0.0 < self.split_ratio < 1.0:
            raise ValidationError(f"split_ratio must lie in (0, 1), got {self.split_ratio}")
        if not 0.0 <= self.unlabeled_fraction <= 1.0:
            raise ValidationError(f"unlabeled_fraction must lie in [0, 1], got {self.unlabeled_fraction}")
        if self.weights is not None and len(self.weights) != sum(self.widths):
            raise ValidationError(f"weights need {sum(self.widths)} entries, got {len(self.weights)}")
        if self.latent_dim < 0 or not 0.0 <= self.homophily <= 1.0 or self.feature_noise < 0:
            raise ValidationError("latent_dim >= 0, homophily in [0, 1], feature_noise >= 0 required")

    @property
    def widths(self) -> tuple[int, int, int]:
        return self.dim_head_features, self.dim_edge_features, self.dim_tail_features

    @property
    def candidate_range(self) -> tuple[int, int]:
        c = self.candidates_per_head
        return (int(c), int(c)) if np.isscalar(c) else (int(c[0]), int(c[1]))

    def planted_weights(self) -> np.ndarray:
        if self.weights is not None:
            return np.asarray(self.weights, dtype=np.float64)
        rng = np.random.default_rng([self.seed, 7])
        w = rng.normal(size=sum(self.widths))
        w *= self.signal / np.linalg.norm(w)
        w[self.dim_head_features] = self.intimacy_weight
        return w


def generate_dataset(spec: DatasetSpec) -> EdgeDataset:
    """Draw a dataset from ``spec``; identical specs give identical datasets.

    Heads are independent; a head is unlabeled (all its edges carry -1) with
    probability ``unlabeled_fraction``, otherwise each edge label is
    Bernoulli(sigmoid(w . [x_head, x_edge, x_tail] + b)).
    """
    rng = np.random.default_rng(spec.seed)
    dh, dr, dt = spec.widths
    lo, hi = spec.candidate_range
    counts = rng.integers(lo, hi + 1, size=spec.n_head_nodes)
    n = int(counts.sum())
    head_of_edge = np.repeat(np.arange(spec.n_head_nodes), counts)
    n_unlabeled = int(round(spec.unlabeled_fraction * spec.n_head_nodes))
    unlabeled_heads = np.zeros(spec.n_head_nodes, dtype=bool)
    unlabeled_heads[rng.permutation(spec.n_head_nodes)[:n_unlabeled]] = True

    if spec.latent_dim == 0:
        head_feats = rng.standard_normal((spec.n_head_nodes, dh))
        x_head = head_feats[head_of_edge]
        x_edge = rng.standard_normal((n, dr))
        x_tail = rng.standard_normal((n, dt))
        w = spec.planted_weights()
        logits = np.hstack([x_head, x_edge, x_tail]) @ w + spec.bias
    else:
        x_head, x_edge, x_tail, logits = _latent_features(spec, rng, head_of_edge, n)

    labels = (rng.random(n) < sigmoid(logits)).astype(np.int64)
    labels[unlabeled_heads[head_of_edge]] = UNLABELED
    return EdgeDataset(np.arange(n), head_of_edge, np.arange(n), labels, x_head, x_edge, x_tail)


def _latent_features(spec: DatasetSpec, rng, head_of_edge, n):
    k, rho, noise = spec.latent_dim, spec.homophily, spec.feature_noise
    dh, dr, dt = spec.widths
    load_h = rng.standard_normal((k, dh)) / np.sqrt(k)
    load_t = rng.standard_normal((k, dt)) / np.sqrt(k)
    load_r = rng.standard_normal((k, dr - 1)) / np.sqrt(k) if dr > 1 else None
    z_head = rng.standard_normal((spec.n_head_nodes, k))
    zh = z_head[head_of_edge]
    zt = rho * zh + np.sqrt(1.0 - rho * rho) * rng.standard_normal((n, k))
    x_head = (z_head @ load_h + noise * rng.standard_normal((spec.n_head_nodes, dh)))[head_of_edge]
    x_tail = zt @ load_t + noise * rng.standard_normal((n, dt))
    intimacy = (zh * zt).sum(axis=1) / np.sqrt(k) + noise * rng.standard_normal(n)
    cols = [intimacy[:, None]]
    if load_r is not None:
        cols.append((zh + zt) @ load_r / np.sqrt(2.0) + noise * rng.standard_normal((n, dr - 1)))
    x_edge = np.hstack(cols)
    # planted score acts on the latent-driven components only
    w = spec.planted_weights()
    clean = np.hstack([zh @ load_h, (zh * zt).sum(axis=1, keepdims=True) / np.sqrt(k),
                       (zh + zt) @ load_r / np.sqrt(2.0) if load_r is not None else np.zeros((n, 0)),
                       zt @ load_t])
    logits = clean @ w + spec.bias
    return x_head, x_edge, x_tail, logits


def split_dataset(data: EdgeDataset, ratio: float, seed: int = 0) -> tuple[EdgeDataset, EdgeDataset]:
    """Split by head node: ``round(ratio * n_heads)`` heads go to train, the
    rest (with all their edges) to validation."""
    if not 0.0 < ratio < 1.0:
        raise ValidationError(f"split ratio must lie in (0, 1), got {ratio}")
    heads = np.unique(data.head_id)
    if len(heads) < 2:
        raise ValidationError(f"need at least 2 heads to split, got {len(heads)}")
    order = np.random.default_rng(seed).permutation(heads)
    n_train = min(max(int(round(ratio * len(heads))), 1), len(heads) - 1)
    train_heads = order[:n_train]
    in_train = np.isin(data.head_id, train_heads)
    return data.take(np.flatnonzero(in_train)), data.take(np.flatnonzero(~in_train))


def head_groups(head_id: np.ndarray) -> list[np.ndarray]:
    """Row indices per head, heads in ascending id order."""
    order = np.argsort(head_id, kind="stable")
    sorted_ids = head_id[order]
    cuts = np.flatnonzero(np.diff(sorted_ids)) + 1
    return np.split(order, cuts)


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def csv_header(widths: Sequence[int]) -> list[str]:
    dh, dr, dt = widths
    return (["edge_id", "head_id", "tail_id", "label"] + [f"h_{i}" for i in range(dh)]
            + [f"r_{i}" for i in range(dr)] + [f"t_{i}" for i in range(dt)])


def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def dumps_csv(data: EdgeDataset) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(csv_header(data.widths))
    feats = data.X
    for i in range(len(data)):
        writer.writerow([int(data.edge_id[i]), int(data.head_id[i]), int(data.tail_id[i]), int(data.label[i])]
                        + [_fmt(v) for v in feats[i]])
    return buf.getvalue()


def write_csv(data: EdgeDataset, path) -> None:
    Path(path).write_bytes(dumps_csv(data).encode("utf-8"))


def _widths_from_header(header: list[str]) -> tuple[int, int, int]:
    if header[:4] != ["edge_id", "head_id", "tail_id", "label"]:
        raise SchemaError(f"header must start with edge_id,head_id,tail_id,label; got {header[:4]}")
    counts = {p: sum(1 for h in header[4:] if h.startswith(p + "_")) for p in ("h", "r", "t")}
    widths = (counts["h"], counts["r"], counts["t"])
    if header != csv_header(widths):
        raise SchemaError("feature columns must be h_0..h_{dh-1}, r_0..r_{dr-1}, t_0..t_{dt-1} in order")
    return widths


def loads_csv(text: str, widths: Sequence[int] | None = None) -> EdgeDataset:
    """Parse dataset CSV text. ``widths`` (if given) must match the header."""
    reader = csv.reader(io.StringIO(text))
    try:
        return _parse_rows(reader, widths)
    except csv.Error as exc:
        raise ParseError(f"malformed CSV: {exc}", reader.line_num) from None


def _parse_rows(rows, widths) -> EdgeDataset:
    try:
        header = next(rows)
    except StopIteration:
        raise SchemaError("empty dataset file") from None
    found = _widths_from_header(header)
    if widths is not None and tuple(widths) != found:
        raise SchemaError(f"header declares widths {found}, expected {tuple(widths)}")
    ncol = len(header)
    ids, labels, feats = [], [], []
    for lineno, row in enumerate(rows, start=2):
        if not row:
            continue
        if len(row) != ncol:
            raise ParseError(f"expected {ncol} columns, got {len(row)}", lineno)
        try:
            ids.append([int(row[0]), int(row[1]), int(row[2])])
        except ValueError:
            raise ParseError(f"non-integer id in {row[:3]}", lineno) from None
        if row[3] not in _LABEL_TOKENS:
            raise ParseError(f"unknown label token {row[3]!r}", lineno)
        labels.append(_LABEL_TOKENS[row[3]])
        try:
            values = [float(v) for v in row[4:]]
        except ValueError:
            raise ParseError("non-numeric feature value", lineno) from None
        if not np.all(np.isfinite(values)):
            raise ParseError("non-finite feature value", lineno)
        feats.append(values)
    if not ids:
        raise SchemaError("dataset file has a header but no rows")
    ids_arr = np.asarray(ids, dtype=np.int64)
    feats_arr = np.asarray(feats, dtype=np.float64)
    dh, dr, _ = found
    return EdgeDataset(ids_arr[:, 0], ids_arr[:, 1], ids_arr[:, 2], labels,
                       feats_arr[:, :dh], feats_arr[:, dh:dh + dr], feats_arr[:, dh + dr:])


def read_csv(path, widths: Sequence[int] | None = None) -> EdgeDataset:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"file is not UTF-8: {exc}") from None
    return loads_csv(text, widths)


# ---------------------------------------------------------------------------
# standardisation
# ---------------------------------------------------------------------------

@dataclass
class Standardizer:
    """Per-dimension z-score for each feature block, fitted on training data."""

    mean: list[np.ndarray] = field(default_factory=list)
    scale: list[np.ndarray] = field(default_factory=list)

    def fit(self, x_head, x_edge, x_tail) -> "Standardizer":
        self.mean, self.scale = [], []
        for x in (x_head, x_edge, x_tail):
            x = np.asarray(x, dtype=np.float64)
            std = x.std(axis=0)
            self.mean.append(x.mean(axis=0))
            self.scale.append(np.where(std > 1e-12, std, 1.0))
        return self

    @property
    def fitted(self) -> bool:
        return len(self.mean) == 3

    def transform(self, x_head, x_edge, x_tail) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.fitted:
            return tuple(np.asarray(x, dtype=np.float64) for x in (x_head, x_edge, x_tail))
        return tuple((np.asarray(x, dtype=np.float64) - m) / s
                     for x, m, s in zip((x_head, x_edge, x_tail), self.mean, self.scale))

    def to_dict(self) -> dict:
        return {"mean": [m.tolist() for m in self.mean], "scale": [s.tolist() for s in self.scale]}

    @classmethod
    def from_dict(cls, d: dict | None) -> "Standardizer":
        if not d:
            return cls()
        return cls([np.asarray(m, dtype=np.float64) for m in d["mean"]],
                   [np.asarray(s, dtype=np.float64) for s in d["scale"]])

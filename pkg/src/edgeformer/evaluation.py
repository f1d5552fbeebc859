"""Per-head ranking metrics and the paired significance test."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .data import POSITIVE, head_groups
from .exceptions import ValidationError

HITS_AT = (1, 3, 5, 10)


def rank_group(scores: Sequence[tuple[int, float]]) -> dict[int, int]:
    """1-based ranks: higher score first, ties broken by ascending tail id."""
    if not scores:
        raise ValidationError("cannot rank an empty group")
    tails = [t for t, _ in scores]
    if len(set(tails)) != len(tails):
        raise ValidationError("duplicate tail_id within one group")
    ordered = sorted(scores, key=lambda ts: (-ts[1], ts[0]))
    return {tail: i for i, (tail, _) in enumerate(ordered, start=1)}


@dataclass
class RankingReport:
    hits1: float
    hits3: float
    hits5: float
    hits10: float
    mr: float
    mrr: float
    top5_back: int
    top10_back: int
    n_groups: int
    seed: int | None = None
    model: str | None = None
    n_excluded: int = 0

    def hits(self, k: int) -> float:
        return getattr(self, f"hits{k}")

    def to_json(self) -> str:
        """Single-line JSON with the fixed public key set."""
        keys = ("hits1", "hits3", "hits5", "hits10", "mr", "mrr", "top5_back", "top10_back",
                "n_groups", "seed", "model")
        d = asdict(self)
        return json.dumps({k: d[k] for k in keys}, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "RankingReport":
        return cls(**json.loads(text))


@dataclass
class Group:
    """Candidates of one active player: parallel tail ids, scores and labels."""

    tail_ids: np.ndarray
    scores: np.ndarray
    labels: np.ndarray
    head_id: int | None = field(default=None)


def _group_ranks(g: Group) -> np.ndarray:
    # descending score, ascending tail id on ties
    order = np.lexsort((g.tail_ids, -g.scores))
    ranks = np.empty(len(order), dtype=np.int64)
    ranks[order] = np.arange(1, len(order) + 1)
    return ranks


def compute_metrics(groups: Iterable[Group], *, seed: int | None = None, model: str | None = None) -> RankingReport:
    """Hits@k, MR and MRR from the best-ranked positive of each group, plus
    top-k-back counts of every positive inside the top k.

    Groups without a positive have no defined rank and are skipped; their
    number is recorded as ``n_excluded``.
    """
    first_ranks = []
    top5 = top10 = 0
    excluded = 0
    for g in groups:
        if len(g.tail_ids) == 0:
            raise ValidationError("empty candidate group")
        if len(np.unique(g.tail_ids)) != len(g.tail_ids):
            raise ValidationError("duplicate tail_id within one group")
        positive = np.asarray(g.labels) == POSITIVE
        if not positive.any():
            excluded += 1
            continue
        ranks = _group_ranks(g)[positive]
        first_ranks.append(int(ranks.min()))
        top5 += int((ranks <= 5).sum())
        top10 += int((ranks <= 10).sum())
    if not first_ranks:
        raise ValidationError("no group contains a positive edge")
    r = np.asarray(first_ranks, dtype=np.float64)
    hits = {k: float((r <= k).mean()) for k in HITS_AT}
    return RankingReport(hits[1], hits[3], hits[5], hits[10], float(r.mean()), float((1.0 / r).mean()),
                         top5, top10, len(first_ranks), seed, model, excluded)


def groups_from_arrays(head_id, tail_id, scores, labels) -> list[Group]:
    head_id, tail_id = np.asarray(head_id), np.asarray(tail_id)
    scores, labels = np.asarray(scores, dtype=np.float64), np.asarray(labels)
    return [Group(tail_id[idx], scores[idx], labels[idx], int(head_id[idx[0]]))
            for idx in head_groups(head_id)]


def evaluate_scores(dataset, scores, *, seed: int | None = None, model: str | None = None) -> RankingReport:
    """Group a dataset's edges by head and score the ranking induced by ``scores``."""
    return compute_metrics(groups_from_arrays(dataset.head_id, dataset.tail_id, scores, dataset.label),
                           seed=seed, model=model)


@dataclass(frozen=True)
class TTestResult:
    t: float
    p: float
    df: int
    mean_difference: float
    degenerate: bool = False


def paired_t_test(runs_a: Sequence[float], runs_b: Sequence[float]) -> TTestResult:
    """Two-sided paired Student t-test on ``a - b`` with ``n - 1`` degrees of freedom.

    Identical samples give ``t = 0, p = 1``. A constant non-zero difference
    has zero variance; the result is flagged ``degenerate`` with ``p = nan``.
    """
    a = np.asarray(runs_a, dtype=np.float64)
    b = np.asarray(runs_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"paired samples need equal 1-d shapes, got {a.shape} and {b.shape}")
    n = a.size
    if n < 2:
        raise ValidationError("paired t-test needs at least two pairs")
    d = a - b
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    df = n - 1
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, df, 0.0)
        return TTestResult(math.copysign(math.inf, mean), math.nan, df, mean, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = float(2.0 * stats.t.sf(abs(t), df))
    return TTestResult(t, min(p, 1.0), df, mean)

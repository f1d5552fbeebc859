import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from edgeformer.data import EdgeDataset
from edgeformer.evaluation import (
    Group,
    RankingReport,
    compute_metrics,
    evaluate_scores,
    paired_t_test,
    rank_group,
)
from edgeformer.exceptions import ValidationError

from oracles import brute_force_metrics


def random_instance(rng, max_size=20, max_groups=8):
    groups = []
    for _ in range(rng.integers(1, max_groups + 1)):
        size = int(rng.integers(1, max_size + 1))
        tails = rng.permutation(100)[:size]
        # coarse scores so ties happen often
        scores = rng.integers(0, 6, size=size) / 2.0
        labels = (rng.random(size) < 0.3).astype(int)
        groups.append((tails, scores, labels))
    if not any(g[2].any() for g in groups):
        groups[0][2][0] = 1
    return groups


def _as_groups(raw):
    return [Group(np.asarray(t), np.asarray(s, dtype=float), np.asarray(y)) for t, s, y in raw]


class TestRankGroup:
    def test_descending(self):
        assert rank_group([("a", 0.9), ("b", 0.1), ("c", 0.5)]) == {"a": 1, "c": 2, "b": 3}

    def test_ties_by_tail(self):
        assert rank_group([(7, 1.0), (3, 1.0), (5, 1.0)]) == {3: 1, 5: 2, 7: 3}

    def test_single(self):
        assert rank_group([(4, -2.0)]) == {4: 1}

    def test_errors(self):
        with pytest.raises(ValidationError):
            rank_group([(1, 0.2), (1, 0.3)])
        with pytest.raises(ValidationError):
            rank_group([])


class TestMetrics:
    def test_worked_example(self):
        groups = [Group(np.array([0, 1, 2]), np.array([0.9, 0.5, 0.1]), np.array([1, 0, 0])),
                  Group(np.array([3, 4, 5]), np.array([0.9, 0.5, 0.1]), np.array([0, 0, 1]))]
        r = compute_metrics(groups)
        assert (r.hits1, r.hits3, r.mr) == (0.5, 1.0, 2.0)
        assert r.mrr == pytest.approx(2 / 3, abs=1e-15)
        assert r.top5_back == 2 and r.n_groups == 2

    def test_all_first(self):
        groups = [Group(np.arange(4), np.array([4.0, 3, 2, 1]), np.array([1, 0, 1, 0])) for _ in range(3)]
        r = compute_metrics(groups)
        assert (r.hits1, r.mr, r.mrr) == (1.0, 1.0, 1.0)
        assert r.top5_back == 6

    def test_excluded_groups(self):
        groups = [Group(np.arange(2), np.zeros(2), np.array([0, 0])),
                  Group(np.arange(2), np.zeros(2), np.array([0, 1]))]
        r = compute_metrics(groups)
        assert r.n_groups == 1 and r.n_excluded == 1 and r.mr == 2.0

    def test_no_positive_anywhere(self):
        with pytest.raises(ValidationError):
            compute_metrics([Group(np.arange(3), np.zeros(3), np.zeros(3))])

    def test_duplicate_tail(self):
        with pytest.raises(ValidationError):
            compute_metrics([Group(np.array([1, 1]), np.zeros(2), np.array([1, 0]))])

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            raw = random_instance(rng)
            got = compute_metrics(_as_groups(raw))
            want = brute_force_metrics(raw)
            for key, value in want.items():
                assert getattr(got, key) == pytest.approx(float(value), abs=1e-12), key

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.sampled_from(["exp", "cube", "affine", "arctan"]))
    def test_monotone_invariance(self, seed, how):
        raw = random_instance(np.random.default_rng(seed))
        f = {"exp": np.exp, "cube": lambda s: s ** 3 + s, "affine": lambda s: 3.0 * s - 7.0,
             "arctan": np.arctan}[how]
        a = compute_metrics(_as_groups(raw))
        b = compute_metrics(_as_groups([(t, f(s), y) for t, s, y in raw]))
        assert a == b

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_report_invariants(self, seed):
        raw = random_instance(np.random.default_rng(seed))
        r = compute_metrics(_as_groups(raw))
        assert r.hits1 <= r.hits3 <= r.hits5 <= r.hits10
        assert r.mr >= 1.0
        assert 1.0 / max(len(t) for t, _, _ in raw) <= r.mrr <= 1.0
        assert r.mrr <= r.hits1 + (1 - r.hits1)

    def test_evaluate_scores_groups_by_head(self):
        data = EdgeDataset(np.arange(4), [0, 0, 1, 1], [0, 1, 2, 3], [0, 1, 1, 0],
                           np.zeros((4, 1)), np.zeros((4, 1)), np.zeros((4, 1)))
        r = evaluate_scores(data, [0.9, 0.1, 0.2, 0.3], seed=3, model="m")
        assert (r.mr, r.n_groups, r.seed, r.model) == (2.0, 2, 3, "m")


class TestReportJson:
    def test_fixed_keys_single_line(self):
        r = RankingReport(0.5, 1.0, 1.0, 1.0, 2.0, 2 / 3, 2, 2, 2, seed=1, model="edge_transformer")
        text = r.to_json()
        assert "\n" not in text
        assert list(json.loads(text)) == ["hits1", "hits3", "hits5", "hits10", "mr", "mrr", "top5_back",
                                          "top10_back", "n_groups", "seed", "model"]
        assert RankingReport.from_json(text) == r


class TestPairedTTest:
    def test_identical(self):
        r = paired_t_test([0.3, 0.5, 0.7], [0.3, 0.5, 0.7])
        assert (r.t, r.p, r.degenerate) == (0.0, 1.0, False)

    def test_consistent_positive_difference(self):
        rng = np.random.default_rng(0)
        b = rng.random(4)
        a = b + 1.0 + rng.normal(scale=1e-3, size=4)
        assert paired_t_test(a, b).p < 0.01

    def test_table_value(self):
        # two-sided 5% critical value for 9 degrees of freedom is 2.262
        dev = np.array([1, -1] * 5, dtype=float)
        dev /= dev.std(ddof=1)
        d = 2.262 / math.sqrt(10) + dev
        r = paired_t_test(d, np.zeros(10))
        assert r.t == pytest.approx(2.262, abs=1e-12)
        assert r.df == 9
        assert r.p == pytest.approx(0.05, abs=1e-3)

    @pytest.mark.parametrize("seed", range(10))
    def test_matches_scipy(self, seed):
        rng = np.random.default_rng(seed)
        a, b = rng.normal(size=10), rng.normal(size=10)
        ours, ref = paired_t_test(a, b), stats.ttest_rel(a, b)
        assert ours.t == pytest.approx(ref.statistic, rel=1e-12)
        assert ours.p == pytest.approx(ref.pvalue, rel=1e-10)

    def test_degenerate(self):
        r = paired_t_test([1.0, 2.0, 3.0], [0.0, 1.0, 2.0])
        assert r.degenerate and math.isnan(r.p) and r.t == math.inf

    def test_errors(self):
        with pytest.raises(ValidationError):
            paired_t_test([1.0], [2.0])
        with pytest.raises(ValidationError):
            paired_t_test([1.0, 2.0], [2.0])

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.linear_model import LogisticRegression

from edgeformer.data import (
    UNLABELED,
    DatasetSpec,
    EdgeDataset,
    Standardizer,
    csv_header,
    dumps_csv,
    generate_dataset,
    head_groups,
    loads_csv,
    read_csv,
    split_dataset,
    write_csv,
)
from edgeformer.exceptions import FormatError, ParseError, SchemaError, ValidationError


def _small(**kw):
    kw.setdefault("n_head_nodes", 20)
    kw.setdefault("candidates_per_head", 3)
    kw.setdefault("dim_head_features", 2)
    kw.setdefault("dim_edge_features", 2)
    kw.setdefault("dim_tail_features", 2)
    return generate_dataset(DatasetSpec(**kw))


class TestGenerator:
    def test_zero_weights_balanced_labels(self):
        spec = DatasetSpec(n_head_nodes=1000, candidates_per_head=10, weights=(0.0,) * 36, bias=0.0, seed=3)
        data = generate_dataset(spec)
        assert len(data) == 10_000
        assert abs(data.label.mean() - 0.5) <= 0.02

    def test_seeded(self):
        assert _small(seed=4).equals(_small(seed=4))
        assert not _small(seed=4).equals(_small(seed=5))

    def test_feature_shape(self):
        data = generate_dataset(DatasetSpec(n_head_nodes=5, dim_head_features=80, dim_edge_features=4,
                                            dim_tail_features=80))
        assert data.widths == (80, 4, 80)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 60), st.integers(1, 4), st.integers(4, 9), st.floats(0.0, 1.0), st.integers(0, 10**6))
    def test_counts_add_up(self, heads, lo, hi, frac, seed):
        spec = DatasetSpec(n_head_nodes=heads, candidates_per_head=(lo, hi), unlabeled_fraction=frac, seed=seed,
                           dim_head_features=2, dim_edge_features=1, dim_tail_features=2)
        data = generate_dataset(spec)
        assert len(data.labeled()) + len(data.unlabeled()) == len(data)
        sizes = np.bincount(data.head_id, minlength=heads)
        assert sizes.min() >= lo and sizes.max() <= hi
        assert len(np.unique(data.head_id[data.label == UNLABELED])) == round(frac * heads)
        # a head is either fully labeled or fully unlabeled
        for idx in head_groups(data.head_id):
            assert len(set(data.label[idx] == UNLABELED)) == 1

    def test_head_features_shared(self):
        data = _small(seed=1)
        for idx in head_groups(data.head_id):
            assert (data.x_head[idx] == data.x_head[idx[0]]).all()

    def test_intimacy_weight_positive(self):
        spec = DatasetSpec(seed=9)
        assert spec.planted_weights()[spec.dim_head_features] == spec.intimacy_weight > 0

    def test_planted_signal_recoverable(self):
        spec = DatasetSpec(n_head_nodes=5000, candidates_per_head=10, seed=2, bias=0.0)
        data = generate_dataset(spec)
        assert len(data) == 50_000
        fit = LogisticRegression(C=1e4, max_iter=2000).fit(data.X, data.label)
        w, w_hat = spec.planted_weights(), fit.coef_[0]
        cosine = w @ w_hat / np.linalg.norm(w) / np.linalg.norm(w_hat)
        assert cosine > 0.95

    @pytest.mark.parametrize("kw", [dict(split_ratio=1.0), dict(split_ratio=0.0), dict(dim_edge_features=0),
                                    dict(unlabeled_fraction=1.5), dict(candidates_per_head=(5, 2)),
                                    dict(weights=(1.0, 2.0))])
    def test_invalid_spec(self, kw):
        with pytest.raises(ValidationError):
            DatasetSpec(**kw)

    def test_latent_mode_is_seeded(self):
        a, b = _small(seed=1, latent_dim=3), _small(seed=1, latent_dim=3)
        assert a.equals(b)


class TestSplit:
    @pytest.mark.parametrize("heads", [7, 10, 51, 200])
    def test_train_fraction_of_heads(self, heads):
        data = _small(n_head_nodes=heads, seed=heads)
        train, val = split_dataset(data, 0.8, seed=1)
        n_train = len(np.unique(train.head_id))
        assert abs(n_train - 0.8 * heads) <= 1
        assert n_train + len(np.unique(val.head_id)) == heads

    def test_disjoint_heads(self):
        train, val = split_dataset(_small(n_head_nodes=50), 0.8, seed=2)
        assert not set(train.head_id) & set(val.head_id)
        assert len(train) + len(val) == 150

    def test_seeded(self):
        data = _small(n_head_nodes=50)
        a, b = split_dataset(data, 0.8, 3), split_dataset(data, 0.8, 3)
        assert a[0].equals(b[0]) and a[1].equals(b[1])

    def test_needs_two_heads(self):
        with pytest.raises(ValidationError):
            split_dataset(_small(n_head_nodes=1), 0.8)

    def test_ratio_range(self):
        with pytest.raises(ValidationError):
            split_dataset(_small(), 1.0)


class TestCsv:
    def test_round_trip(self, tmp_path):
        data = _small(seed=6, unlabeled_fraction=0.3)
        path = tmp_path / "d.csv"
        write_csv(data, path)
        back = read_csv(path, widths=data.widths)
        assert dumps_csv(back) == path.read_text()
        for name in ("edge_id", "head_id", "tail_id", "label"):
            np.testing.assert_array_equal(getattr(back, name), getattr(data, name))
        np.testing.assert_array_equal(back.X, np.vectorize(lambda v: float(format(v, ".9g")))(data.X))

    def test_header(self):
        assert csv_header((1, 2, 1)) == ["edge_id", "head_id", "tail_id", "label", "h_0", "r_0", "r_1", "t_0"]

    def _text(self, row):
        return "edge_id,head_id,tail_id,label,h_0,r_0,t_0\n0,0,0,1,0.5,1,2\n" + row + "\n"

    @pytest.mark.parametrize("row,fragment", [
        ("1,0,1,1,0,1", "columns"),
        ("1,0,1,1,1,0,1,2", "columns"),
        ("1,0,1,yes,0,1,2", "label"),
        ("1,0,1,1,abc,1,2", "non-numeric"),
        ("1,0,1,1,nan,1,2", "non-finite"),
        ("x,0,1,1,0,1,2", "non-integer"),
    ])
    def test_parse_errors_carry_line(self, row, fragment):
        with pytest.raises(ParseError, match=fragment) as info:
            loads_csv(self._text(row))
        assert info.value.line == 3
        assert str(info.value).startswith("line 3")

    def test_schema_mismatch(self):
        with pytest.raises(SchemaError):
            loads_csv(self._text("1,0,1,0,0,1,2"), widths=(2, 1, 1))
        with pytest.raises(SchemaError):
            loads_csv("edge_id,head_id,tail_id,label,t_0,h_0,r_0\n0,0,0,1,1,1,1\n")
        with pytest.raises(SchemaError):
            loads_csv("")

    def test_binary_garbage(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_bytes(b"\xff\xfe\x00garbage")
        with pytest.raises(FormatError):
            read_csv(path)


class TestStandardizer:
    def test_zero_mean_unit_scale(self):
        data = _small(n_head_nodes=200, seed=7)
        xs = Standardizer().fit(*data.features).transform(*data.features)
        for x in xs:
            np.testing.assert_allclose(x.mean(axis=0), 0.0, atol=1e-12)
            np.testing.assert_allclose(x.std(axis=0), 1.0, atol=1e-12)

    def test_constant_column_kept_finite(self):
        x = np.ones((4, 2))
        out = Standardizer().fit(x, x, x).transform(x, x, x)
        assert all(np.array_equal(o, np.zeros((4, 2))) for o in out)

    def test_dict_round_trip(self):
        data = _small(seed=8)
        s = Standardizer().fit(*data.features)
        t = Standardizer.from_dict(s.to_dict())
        for a, b in zip(s.transform(*data.features), t.transform(*data.features)):
            np.testing.assert_array_equal(a, b)


def test_dataset_validation():
    with pytest.raises(ValidationError):
        EdgeDataset([0], [0], [0], [2], np.zeros((1, 1)), np.zeros((1, 1)), np.zeros((1, 1)))

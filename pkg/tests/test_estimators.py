import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.linear_model import LogisticRegression

from edgeformer import (
    DatasetSpec,
    EdgeMAEPretrainer,
    EdgeTransformerClassifier,
    IntimacyRanker,
    LinkPredictionClassifier,
    generate_dataset,
    split_dataset,
)
from edgeformer.checkpoint import Checkpoint
from edgeformer.exceptions import ConfigurationError, ValidationError

WIDTHS = (3, 2, 3)
FAST = dict(feature_widths=WIDTHS, d_model=6, n_heads=2, n_encoder_layers=1, epochs=2, batch_size=32)


@pytest.fixture(scope="module")
def data():
    spec = DatasetSpec(n_head_nodes=40, candidates_per_head=5, dim_head_features=3, dim_edge_features=2,
                       dim_tail_features=3, unlabeled_fraction=0.5, seed=1)
    ds = generate_dataset(spec)
    train, val = split_dataset(ds.labeled(), 0.8, 1)
    return train, val, ds.unlabeled()


def test_get_params_and_clone():
    clf = EdgeTransformerClassifier(d_model=12, learning_rate=3e-3)
    params = clf.get_params()
    assert params["d_model"] == 12 and params["warm_start_from"] is None
    twin = clone(clf)
    assert twin.get_params() == params and twin is not clf
    assert clone(clf.set_params(epochs=3)).epochs == 3


def test_unfitted():
    with pytest.raises(NotFittedError):
        EdgeTransformerClassifier(**FAST).predict(np.zeros((1, 8)))


def test_classifier_fit_predict(data):
    train, val, _ = data
    clf = EdgeTransformerClassifier(**FAST).fit(train.X, train.label)
    proba = clf.predict_proba(val.X)
    assert proba.shape == (len(val), 2)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(np.unique(clf.predict(val.X))) <= {0, 1}
    assert len(clf.loss_curve_) == 2
    assert clf.checkpoint_.kind == "edge_transformer"
    report = clf.ranking_report(val)
    assert 0 < report.mrr <= 1


def test_classifier_is_seeded(data):
    train, val, _ = data
    a = EdgeTransformerClassifier(**FAST, random_state=3).fit(train.X, train.label).decision_function(val.X)
    b = EdgeTransformerClassifier(**FAST, random_state=3).fit(train.X, train.label).decision_function(val.X)
    assert a.tobytes() == b.tobytes()


def test_warm_start_from_pretrainer(data):
    train, val, unlabeled = data
    mae = EdgeMAEPretrainer(**FAST).fit(unlabeled.X)
    assert mae.transform(val.X).shape == (len(val), 6)
    clf = EdgeTransformerClassifier(**dict(FAST, epochs=1), warm_start_from=mae, learning_rate=1e-12,
                                    weight_decay=0.0).fit(train.X, train.label)
    # a vanishing step keeps the transferred embedding essentially intact
    np.testing.assert_allclose(clf.params_["embed.head.fc1.weight"], mae.params_["embed.head.fc1.weight"],
                               atol=1e-9)
    ckpt = Checkpoint.from_bytes(mae.to_checkpoint().to_bytes())
    from_ckpt = EdgeTransformerClassifier(**FAST, warm_start_from=ckpt).fit(train.X, train.label)
    assert from_ckpt.predict(val.X).shape == (len(val),)


def test_warm_start_rejects_other_objects(data):
    train, _, _ = data
    with pytest.raises(ConfigurationError):
        EdgeTransformerClassifier(**FAST, warm_start_from="model.ckpt").fit(train.X, train.label)


def test_rejects_unlabeled_targets(data):
    _, _, unlabeled = data
    with pytest.raises(ValidationError):
        EdgeTransformerClassifier(**FAST).fit(unlabeled.X, unlabeled.label)


def test_rejects_wrong_width(data):
    train, _, _ = data
    with pytest.raises(ValidationError):
        EdgeTransformerClassifier(**FAST).fit(train.X[:, :-1], train.label)


def test_rejects_non_finite(data):
    train, _, _ = data
    X = train.X.copy()
    X[0, 0] = np.nan
    with pytest.raises(ValueError):
        EdgeTransformerClassifier(**FAST).fit(X, train.label)


@pytest.mark.parametrize("method", ["edge_mlp", "bilinear", "distmult", "transe", "convkb"])
def test_link_prediction(data, method):
    train, val, _ = data
    clf = LinkPredictionClassifier(method=method, feature_widths=WIDTHS, d_model=6, epochs=2).fit(
        train.X, train.label)
    assert clf.decision_function(val.X).shape == (len(val),)
    assert clf.checkpoint_.kind == method


def test_unknown_method(data):
    train, _, _ = data
    with pytest.raises(ConfigurationError):
        LinkPredictionClassifier(method="xgb", feature_widths=WIDTHS).fit(train.X, train.label)


def test_intimacy_ranker(data):
    _, val, _ = data
    ranker = IntimacyRanker(feature_widths=WIDTHS).fit(val.X)
    np.testing.assert_array_equal(ranker.decision_function(val.X), val.x_edge[:, 0])
    assert ranker.ranking_report(val).model == "intimacy"


def test_pretrainer_in_pipeline(data):
    train, val, _ = data
    pipe = make_pipeline(EdgeMAEPretrainer(**FAST), LogisticRegression())
    pipe.fit(train.X, train.label)
    assert pipe.predict(val.X).shape == (len(val),)

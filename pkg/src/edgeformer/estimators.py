"""scikit-learn compatible estimators.

Every estimator takes ``X`` as the concatenated ``[x_head | x_edge | x_tail]``
matrix (``EdgeDataset.X``) and splits it using ``feature_widths``, so the
models drop into pipelines, ``clone`` and model-selection utilities.

>>> mae = EdgeMAEPretrainer(epochs=5).fit(unlabeled.X)          # doctest: +SKIP
>>> clf = EdgeTransformerClassifier(warm_start_from=mae).fit(train.X, train.label)  # doctest: +SKIP
>>> clf.predict_proba(val.X)[:, 1]                                # doctest: +SKIP
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import type_of_target
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .autodiff import sigmoid
from .baselines import BASELINES, intimacy_scores, predict_baseline
from .checkpoint import Checkpoint
from .config import ModelConfig, TrainConfig
from .data import EdgeDataset, Standardizer
from .evaluation import RankingReport, evaluate_scores
from .exceptions import ConfigurationError, ValidationError
from .mae import transfer_encoder
from .transformer import cls_representation, predict_logits
from .training import baseline_loop, finetune_loop, pretrain_loop


def split_features(X, feature_widths) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate a concatenated feature matrix and cut it into the three blocks."""
    X = check_array(X, dtype=np.float64, ensure_all_finite=True)
    dh, dr, dt = feature_widths
    if X.shape[1] != dh + dr + dt:
        raise ValidationError(f"X has {X.shape[1]} columns, feature_widths {tuple(feature_widths)} "
                              f"need {dh + dr + dt}")
    return X[:, :dh], X[:, dh:dh + dr], X[:, dh + dr:]


def _binary_target(X, y):
    X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
    if type_of_target(y) not in ("binary", "continuous") or not np.isin(y, (0, 1)).all():
        raise ValidationError("labels must be 0 or 1 (unlabeled edges belong in pre-training)")
    return X, y.astype(np.int64)


class _EdgeModelMixin:
    """Shared config plumbing for the neural estimators."""

    def _model_config(self) -> ModelConfig:
        dh, dr, dt = self.feature_widths
        return ModelConfig(d_model=self.d_model, n_heads=self.n_heads, n_encoder_layers=self.n_encoder_layers,
                           n_decoder_layers=getattr(self, "n_decoder_layers", 1), ffn_dim=self.ffn_dim,
                           dim_head_features=dh, dim_edge_features=dr, dim_tail_features=dt,
                           mask_ratio=getattr(self, "mask_ratio", 1.0 / 3.0), dropout=self.dropout)

    def _train_config(self, mode: str) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, weight_decay=self.weight_decay,
                           batch_size=self.batch_size, epochs=self.epochs, seed=self.random_state,
                           clip_norm=self.clip_norm, max_steps=self.max_steps, mode=mode)

    def _blocks(self, X):
        check_is_fitted(self, "params_")
        return self.standardizer_.transform(*split_features(X, self.feature_widths))

    def to_checkpoint(self) -> Checkpoint:
        check_is_fitted(self, "checkpoint_")
        return self.checkpoint_

    def ranking_report(self, dataset: EdgeDataset, model: str | None = None) -> RankingReport:
        """Hits@k / MR / MRR of this model's scores on a labeled dataset."""
        return evaluate_scores(dataset, self.decision_function(dataset.X), seed=self.random_state,
                               model=model or type(self).__name__)


class EdgeMAEPretrainer(_EdgeModelMixin, TransformerMixin, BaseEstimator):
    """Masked-autoencoder pre-training of the Edge Transformer encoder.

    ``fit`` ignores labels. ``transform`` returns the final CLS state of the
    encoder on uncorrupted edges.
    """

    def __init__(self, feature_widths=(16, 4, 16), d_model=48, n_heads=3, n_encoder_layers=2,
                 n_decoder_layers=1, ffn_dim=None, mask_ratio=1.0 / 3.0, dropout=0.0,
                 learning_rate=1.5e-4, weight_decay=0.05, batch_size=256, epochs=20,
                 max_steps=None, clip_norm=1.0, standardize=True, random_state=0):
        self.feature_widths = feature_widths
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_encoder_layers = n_encoder_layers
        self.n_decoder_layers = n_decoder_layers
        self.ffn_dim = ffn_dim
        self.mask_ratio = mask_ratio
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.random_state = random_state

    def fit(self, X, y=None):
        xh, xr, xt = split_features(X, self.feature_widths)
        n = len(xh)
        data = EdgeDataset(np.arange(n), np.arange(n), np.arange(n), np.full(n, -1), xh, xr, xt)
        config = self._model_config()
        result = pretrain_loop(data, config, self._train_config("pretrain"), standardize=self.standardize)
        self.model_config_ = config
        self.params_ = result.params
        self.standardizer_ = Standardizer.from_dict(result.checkpoint.standardization)
        self.loss_curve_ = result.trace
        self.n_steps_ = result.steps
        self.checkpoint_ = result.checkpoint
        return self

    def transform(self, X):
        xh, xr, xt = self._blocks(X)
        return cls_representation(xh, xr, xt, self.params_.leaves(requires_grad=False), self.model_config_)

    def encoder_params(self, seed: int = 0):
        """Edge Transformer parameters initialised from this encoder."""
        check_is_fitted(self, "params_")
        return transfer_encoder(self.params_, self.model_config_, seed)


class EdgeTransformerClassifier(_EdgeModelMixin, ClassifierMixin, BaseEstimator):
    """Edge classifier: three token MLPs, CLS, Transformer encoder, linear head.

    ``warm_start_from`` may be a fitted :class:`EdgeMAEPretrainer` or an
    ``edge_mae`` :class:`Checkpoint`; its encoder initialises the model and
    its feature statistics are reused.
    """

    def __init__(self, feature_widths=(16, 4, 16), d_model=48, n_heads=3, n_encoder_layers=2,
                 ffn_dim=None, dropout=0.0, learning_rate=1e-3, weight_decay=0.05, batch_size=256,
                 epochs=50, max_steps=None, clip_norm=1.0, standardize=True, warm_start_from=None,
                 random_state=0):
        self.feature_widths = feature_widths
        self.d_model = d_model
        self.n_heads = n_heads
        self.n_encoder_layers = n_encoder_layers
        self.ffn_dim = ffn_dim
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.warm_start_from = warm_start_from
        self.random_state = random_state

    def _warm_start(self, config: ModelConfig):
        source = self.warm_start_from
        if source is None:
            return None, None
        if isinstance(source, EdgeMAEPretrainer):
            check_is_fitted(source, "params_")
            params, stats = source.params_, source.standardizer_
        elif isinstance(source, Checkpoint):
            params, stats = source.params, Standardizer.from_dict(source.standardization)
        else:
            raise ConfigurationError(f"cannot warm start from {type(source).__name__}")
        return transfer_encoder(params, config, [self.random_state, 2]), stats

    def fit(self, X, y):
        X, y = _binary_target(X, y)
        xh, xr, xt = split_features(X, self.feature_widths)
        n = len(y)
        data = EdgeDataset(np.arange(n), np.arange(n), np.arange(n), y, xh, xr, xt)
        config = self._model_config()
        init, stats = self._warm_start(config)
        result = finetune_loop(data, config, self._train_config("finetune"), init=init,
                               standardizer=stats, standardize=self.standardize)
        self.classes_ = np.array([0, 1])
        self.model_config_ = config
        self.params_ = result.params
        self.standardizer_ = Standardizer.from_dict(result.checkpoint.standardization)
        self.loss_curve_ = result.trace
        self.n_steps_ = result.steps
        self.checkpoint_ = result.checkpoint
        return self

    def decision_function(self, X):
        return predict_logits(*self._blocks(X), self.params_, self.model_config_)

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(np.int64)


class LinkPredictionClassifier(_EdgeModelMixin, ClassifierMixin, BaseEstimator):
    """Baseline scorer (``edge_mlp``, ``bilinear``, ``distmult``, ``transe``,
    ``convkb``) trained with the same loss and optimiser as the main model."""

    def __init__(self, method="edge_mlp", feature_widths=(16, 4, 16), d_model=48, learning_rate=1e-3,
                 weight_decay=0.05, batch_size=256, epochs=50, max_steps=None, clip_norm=1.0,
                 standardize=True, random_state=0):
        self.method = method
        self.feature_widths = feature_widths
        self.d_model = d_model
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.clip_norm = clip_norm
        self.standardize = standardize
        self.random_state = random_state

    def _model_config(self) -> ModelConfig:
        dh, dr, dt = self.feature_widths
        return ModelConfig(d_model=self.d_model, n_heads=1, dim_head_features=dh,
                           dim_edge_features=dr, dim_tail_features=dt)

    def fit(self, X, y):
        if self.method not in BASELINES:
            raise ConfigurationError(f"unknown method {self.method!r}; choose from {BASELINES}")
        X, y = _binary_target(X, y)
        xh, xr, xt = split_features(X, self.feature_widths)
        n = len(y)
        data = EdgeDataset(np.arange(n), np.arange(n), np.arange(n), y, xh, xr, xt)
        config = self._model_config()
        result = baseline_loop(self.method, data, config, self._train_config(self.method),
                               standardize=self.standardize)
        self.classes_ = np.array([0, 1])
        self.model_config_ = config
        self.params_ = result.params
        self.standardizer_ = Standardizer.from_dict(result.checkpoint.standardization)
        self.loss_curve_ = result.trace
        self.n_steps_ = result.steps
        self.checkpoint_ = result.checkpoint
        return self

    def decision_function(self, X):
        return predict_baseline(self.method, *self._blocks(X), self.params_, self.model_config_)

    def predict_proba(self, X):
        p = sigmoid(self.decision_function(X))
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        return (self.decision_function(X) >= 0.0).astype(np.int64)


class IntimacyRanker(BaseEstimator):
    """Rule-based ranker: the score is the raw intimacy edge feature."""

    def __init__(self, feature_widths=(16, 4, 16), intimacy_index=0, random_state=None):
        self.feature_widths = feature_widths
        self.intimacy_index = intimacy_index
        self.random_state = random_state

    def fit(self, X, y=None):
        split_features(X, self.feature_widths)
        self.fitted_ = True
        return self

    def decision_function(self, X):
        _, xr, _ = split_features(X, self.feature_widths)
        return intimacy_scores(xr, self.intimacy_index)

    def ranking_report(self, dataset: EdgeDataset, model: str = "intimacy") -> RankingReport:
        return evaluate_scores(dataset, self.decision_function(dataset.X), seed=self.random_state, model=model)

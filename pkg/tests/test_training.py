import numpy as np
import pytest

from edgeformer.config import ModelConfig, TrainConfig
from edgeformer.data import DatasetSpec, generate_dataset
from edgeformer.exceptions import ValidationError
from edgeformer.mae import transfer_encoder
from edgeformer.training import baseline_loop, finetune_loop, init_rng, pretrain_loop
from edgeformer.transformer import embed_tokens, encoder_forward

CONFIG = ModelConfig(d_model=6, n_heads=2, n_encoder_layers=1, dim_head_features=3, dim_edge_features=2,
                     dim_tail_features=3)


@pytest.fixture(scope="module")
def dataset():
    spec = DatasetSpec(n_head_nodes=30, candidates_per_head=4, dim_head_features=3, dim_edge_features=2,
                       dim_tail_features=3, unlabeled_fraction=0.5, seed=2)
    return generate_dataset(spec)


def test_trace_length_equals_epochs(dataset):
    result = pretrain_loop(dataset.unlabeled(), CONFIG, TrainConfig(epochs=3, batch_size=16))
    assert len(result.trace) == 3
    assert result.steps == 3 * int(np.ceil(len(dataset.unlabeled()) / 16))
    assert result.checkpoint.metadata["epoch"] == 3


def test_batch_capped_at_dataset_size(dataset):
    labeled = dataset.labeled()
    result = finetune_loop(labeled, CONFIG, TrainConfig(epochs=2, batch_size=10_000))
    assert result.steps == 2


def test_max_steps(dataset):
    result = finetune_loop(dataset.labeled(), CONFIG, TrainConfig(epochs=50, batch_size=8, max_steps=5))
    assert result.steps == 5 and result.state.t == 5


def test_pretrain_is_bitwise_seeded(dataset):
    config = TrainConfig(epochs=2, batch_size=16, seed=4)
    a = pretrain_loop(dataset.unlabeled(), CONFIG, config).checkpoint.to_bytes()
    b = pretrain_loop(dataset.unlabeled(), CONFIG, config).checkpoint.to_bytes()
    c = pretrain_loop(dataset.unlabeled(), CONFIG, config.replace(seed=5)).checkpoint.to_bytes()
    assert a == b and a != c


def test_finetune_is_bitwise_seeded_with_dropout(dataset):
    config = ModelConfig(d_model=6, n_heads=2, n_encoder_layers=1, dim_head_features=3, dim_edge_features=2,
                         dim_tail_features=3, dropout=0.1)
    train = TrainConfig(epochs=2, batch_size=16, seed=1)
    a = finetune_loop(dataset.labeled(), config, train).checkpoint.to_bytes()
    b = finetune_loop(dataset.labeled(), config, train).checkpoint.to_bytes()
    assert a == b


def test_empty_dataset(dataset):
    with pytest.raises(ValidationError):
        pretrain_loop(dataset.take([]), CONFIG, TrainConfig())


def test_finetune_rejects_unlabeled(dataset):
    with pytest.raises(ValidationError, match="unlabeled"):
        finetune_loop(dataset, CONFIG, TrainConfig(epochs=1))


def test_transfer_keeps_first_batch_activations(dataset):
    pre = pretrain_loop(dataset.unlabeled(), CONFIG, TrainConfig(epochs=1, batch_size=16))
    init = transfer_encoder(pre.params, CONFIG, init_rng(0))
    x = [b[:8] for b in dataset.labeled().features]
    act = lambda store: encoder_forward(embed_tokens(*x, store.leaves(False), CONFIG), store.leaves(False),
                                        CONFIG).data
    assert act(init).tobytes() == act(pre.params).tobytes()


def test_loss_falls(dataset):
    result = finetune_loop(dataset.labeled(), CONFIG, TrainConfig(epochs=30, batch_size=16, learning_rate=1e-2))
    assert result.trace[-1] < result.trace[0]


@pytest.mark.parametrize("name", ["edge_mlp", "convkb"])
def test_baseline_loop(dataset, name):
    result = baseline_loop(name, dataset.labeled(), CONFIG, TrainConfig(epochs=2, batch_size=16, mode=name))
    assert result.checkpoint.kind == name and len(result.trace) == 2

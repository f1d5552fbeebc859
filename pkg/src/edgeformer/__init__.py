"""Edge Transformer and Edge MAE for lost-friend recall, on a NumPy autodiff core."""

from .baselines import BASELINES, intimacy_rank
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig
from .data import DatasetSpec, EdgeDataset, EdgeRecord, generate_dataset, read_csv, split_dataset, write_csv
from .estimators import EdgeMAEPretrainer, EdgeTransformerClassifier, IntimacyRanker, LinkPredictionClassifier
from .evaluation import RankingReport, compute_metrics, evaluate_scores, paired_t_test
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    EdgeformerError,
    FormatError,
    ParseError,
    SchemaError,
    TransferError,
    ValidationError,
)
from .mae import transfer_encoder
from .params import ParamStore
from .training import finetune_loop, pretrain_loop

__version__ = "0.1.0"

__all__ = [
    "BASELINES",
    "Checkpoint",
    "CheckpointError",
    "ConfigurationError",
    "DatasetSpec",
    "EdgeDataset",
    "EdgeMAEPretrainer",
    "EdgeRecord",
    "EdgeTransformerClassifier",
    "EdgeformerError",
    "FormatError",
    "IntimacyRanker",
    "LinkPredictionClassifier",
    "ModelConfig",
    "ParamStore",
    "ParseError",
    "RankingReport",
    "SchemaError",
    "TrainConfig",
    "TransferError",
    "ValidationError",
    "compute_metrics",
    "evaluate_scores",
    "finetune_loop",
    "generate_dataset",
    "intimacy_rank",
    "load_checkpoint",
    "paired_t_test",
    "pretrain_loop",
    "read_csv",
    "save_checkpoint",
    "split_dataset",
    "transfer_encoder",
    "write_csv",
]

"""Filter-then-fuse sparse recommendation backbone at desk scale."""

from .data import CsvSchema, Dataset, SyntheticSpec, encode_dataset, generate, load_csv, write_csv
from .engine import Tape, Tensor, backward, finite_diff_check
from .ics import ICSParams, ICSTrace, ics_forward, ics_sparsity, ste_topk_forward
from .layers import PredictionHead, SSRLayer, SSRLayerConfig
from .metrics import evaluate_auc, evaluate_gauc, evaluate_logloss
from .model import (
    Model,
    ModelConfig,
    TrainConfig,
    build_model,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .views import ViewSelection, apply_filter, sample_views

__all__ = [
    "CsvSchema", "Dataset", "SyntheticSpec", "encode_dataset", "generate",
    "load_csv", "write_csv",
    "Tape", "Tensor", "backward", "finite_diff_check",
    "ICSParams", "ICSTrace", "ics_forward", "ics_sparsity",
    "ste_topk_forward",
    "PredictionHead", "SSRLayer", "SSRLayerConfig",
    "evaluate_auc", "evaluate_gauc", "evaluate_logloss",
    "Model", "ModelConfig", "TrainConfig", "build_model",
    "load_checkpoint", "save_checkpoint", "train",
    "ViewSelection", "apply_filter", "sample_views",
]

__version__ = "0.1.0"

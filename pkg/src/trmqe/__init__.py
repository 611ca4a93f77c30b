"""Recursive weight-shared transformer head for sentence-level MT quality estimation."""

from .checkpoint import load_checkpoint, save_checkpoint
from .data import EmbeddedExample, QeRecord, load_dataset
from .embfile import read_embedding_file, write_embedding_file
from .metrics import EvalReport, evaluate_model, mae, pearson, spearman
from .model import ParamStore, QeModel, TrmConfig, count_trainable
from .svd import SvdProjector, fit_svd, project
from .synth import synth_task
from .train import TrainConfig, TrainLog, train

__version__ = "0.1.0"

__all__ = [
    "EmbeddedExample",
    "EvalReport",
    "ParamStore",
    "QeModel",
    "QeRecord",
    "SvdProjector",
    "TrainConfig",
    "TrainLog",
    "TrmConfig",
    "count_trainable",
    "evaluate_model",
    "fit_svd",
    "load_checkpoint",
    "load_dataset",
    "mae",
    "pearson",
    "project",
    "read_embedding_file",
    "save_checkpoint",
    "spearman",
    "synth_task",
    "train",
    "write_embedding_file",
]

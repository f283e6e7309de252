"""Sentence-pair answer selection over learnable multi-channel token similarity maps."""

__version__ = "0.1.0"

from .data import DatasetSplit, QAInstance, build_idf, build_instances, filter_degenerate, parse_split
from .embeddings import EmbeddingTable, load_embeddings, shape_sequence, tokenize
from .evaluation import RankedRun, evaluate
from .matchnet import ConvSpec, ModelParams, NetConfig, forward, init_params, load_checkpoint, save_checkpoint
from .similarity import Measurement
from .trainer import TrainConfig, train

__all__ = [
    "ConvSpec",
    "DatasetSplit",
    "EmbeddingTable",
    "Measurement",
    "ModelParams",
    "NetConfig",
    "QAInstance",
    "RankedRun",
    "TrainConfig",
    "build_idf",
    "build_instances",
    "evaluate",
    "filter_degenerate",
    "forward",
    "init_params",
    "load_checkpoint",
    "load_embeddings",
    "parse_split",
    "save_checkpoint",
    "shape_sequence",
    "tokenize",
    "train",
]

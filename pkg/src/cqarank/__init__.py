"""Multitask neural reranking for community question answering: three
text-pair relevance tasks (comment-to-question, question-to-question, and
comment-to-new-question) trained jointly over shared convolutional sentence
encoders."""

from .dataset import (
    BinaryLabels,
    CorpusError,
    Triple,
    binarize,
    extend_dataset,
    load_corpus,
    positive_rates,
    save_corpus,
    threads_from_corpus,
)
from .evaluation import (
    EvalResult,
    average_precision,
    evaluate,
    evaluate_scores,
    evaluate_tasks,
    reciprocal_rank,
    tune_alpha,
    weighted_combine,
)
from .model import MtlModel, PairModel, rank_bin
from .nn_core import NumericError, Parameter, RmsProp, Tensor, grad_check
from .text_pipeline import Vocabulary, build_vocabulary, preprocess, tokenize
from .training import (
    CheckpointError,
    EarlyStopper,
    TrainConfig,
    TrainReport,
    load_checkpoint,
    save_checkpoint,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "BinaryLabels",
    "CheckpointError",
    "CorpusError",
    "EarlyStopper",
    "EvalResult",
    "MtlModel",
    "NumericError",
    "PairModel",
    "Parameter",
    "RmsProp",
    "Tensor",
    "TrainConfig",
    "TrainReport",
    "Triple",
    "Vocabulary",
    "average_precision",
    "binarize",
    "build_vocabulary",
    "evaluate",
    "evaluate_scores",
    "evaluate_tasks",
    "extend_dataset",
    "grad_check",
    "load_checkpoint",
    "load_corpus",
    "positive_rates",
    "preprocess",
    "rank_bin",
    "reciprocal_rank",
    "save_checkpoint",
    "save_corpus",
    "threads_from_corpus",
    "tokenize",
    "train",
    "tune_alpha",
    "weighted_combine",
]

"""Hierarchical multi-turn intent classifier with a multi-task ranking objective."""

from .encoder import HashedEncoder, degenerate_vector, encode_hashed, is_degenerate_vector
from .evaluate import EvaluationError, evaluate, render_metrics, save_metrics
from .losses import bce_ranking_loss, contrastive_loss, intent_loss, ranking_scores
from .model import (
    MintClModel,
    ShapeError,
    TreeIndex,
    beam_search,
    brute_force_best_path,
    log_softmax,
    softmax,
)
from .train import (
    MODES,
    EncodedBatch,
    TrainConfig,
    TrainingError,
    batch_losses,
    encode_binary,
    encode_intent_samples,
    encode_pairs,
    gradient_check,
    loss_and_grads,
    select_intent_samples,
    train,
)

__all__ = [
    "HashedEncoder",
    "degenerate_vector",
    "encode_hashed",
    "is_degenerate_vector",
    "EvaluationError",
    "evaluate",
    "render_metrics",
    "save_metrics",
    "bce_ranking_loss",
    "contrastive_loss",
    "intent_loss",
    "ranking_scores",
    "MintClModel",
    "ShapeError",
    "TreeIndex",
    "beam_search",
    "brute_force_best_path",
    "log_softmax",
    "softmax",
    "MODES",
    "EncodedBatch",
    "TrainConfig",
    "TrainingError",
    "batch_losses",
    "encode_binary",
    "encode_intent_samples",
    "encode_pairs",
    "gradient_check",
    "loss_and_grads",
    "select_intent_samples",
    "train",
]

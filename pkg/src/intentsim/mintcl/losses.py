"""Loss functions: per-level cross-entropy, contrastive and binary ranking."""
from __future__ import annotations

import numpy as np

from ..corpus_model import IntentPath
from .model import MintClModel, TreeIndex, log_softmax


def softplus(x):
    """log(1 + e^x), stable for large |x|."""
    x = np.asarray(x, dtype=float)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    expx = np.exp(x[~pos])
    out[~pos] = expx / (1.0 + expx)
    return out


def intent_loss(
    logits: tuple[np.ndarray, np.ndarray, np.ndarray],
    gold: IntentPath | tuple[int, int, int],
    tree: TreeIndex | None = None,
) -> float:
    """Sum of the three per-level cross-entropies for one sample."""
    if isinstance(gold, IntentPath):
        if tree is None:
            raise ValueError("tree index required to resolve an IntentPath gold label")
        gold = tree.gold_indices(gold)
    total = 0.0
    for z, idx in zip(logits, gold):
        total -= float(log_softmax(np.asarray(z, dtype=float))[idx])
    return total


def contrastive_loss(l_plus: float, l_minus: float) -> float:
    """-log sigmoid(l_plus - l_minus); ln 2 at equality, always positive."""
    return float(softplus(-(l_plus - l_minus)))


def bce_ranking_loss(score: float, label: int) -> float:
    """Binary cross-entropy on a raw ranking score with target 0/1."""
    if label not in (0, 1):
        raise ValueError("label must be 0 or 1")
    return float(softplus(score) - label * score)


def ranking_scores(
    q_all: str, a_plus: str, a_minus: str, model: MintClModel
) -> tuple[float, float]:
    """Score both answers against the same context via the ranking head."""
    h_plus = model.encoder.encode(f"{q_all} [SEP] {a_plus}", dtype=model.dtype)
    h_minus = model.encoder.encode(f"{q_all} [SEP] {a_minus}", dtype=model.dtype)
    w, b = model["W_r"], model["b_r"]
    return float(h_plus @ w + b[0]), float(h_minus @ w + b[0])

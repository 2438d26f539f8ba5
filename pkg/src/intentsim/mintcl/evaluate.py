"""Last-turn intent prediction over held-out conversations."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from ..corpus_model import Conversation
from .model import MintClModel, beam_search, log_softmax


class EvaluationError(RuntimeError):
    pass


def evaluate(
    model: MintClModel,
    conversations: Sequence[Conversation],
    beam_width: int = 4,
    min_turns: int = 2,
    setting: str | None = None,
) -> dict:
    """Accuracy of predicting the final turn's intent from all questions so far.

    Single-turn conversations (below min_turns) and unlabeled finals are
    excluded. Per-level accuracies come from the same predicted paths.
    """
    eligible = [
        conv
        for conv in conversations
        if conv.n_turns >= min_turns and not conv.turns[-1].intent.is_unlabeled()
    ]
    if not eligible:
        raise EvaluationError("no eligible multi-turn conversations to evaluate")

    texts = [", ".join(conv.questions()) for conv in eligible]
    X = model.encoder.encode_batch(texts, dtype=model.dtype)
    Z1, Z2, Z3 = model.ensemble_logits(X)
    S1, S2, S3 = log_softmax(Z1), log_softmax(Z2), log_softmax(Z3)

    hits = [0, 0, 0]
    exact = 0
    for i, conv in enumerate(eligible):
        pred = beam_search((S1[i], S2[i], S3[i]), model.tree, beam_width)
        gold = model.tree.gold_indices(conv.turns[-1].intent)
        for level in range(3):
            hits[level] += pred[level] == gold[level]
        exact += pred == gold
    n = len(eligible)
    metrics = {
        "accuracy": exact / n,
        "per_level": [hits[0] / n, hits[1] / n, hits[2] / n],
        "n_test": n,
    }
    if setting is not None:
        metrics = {"setting": setting, **metrics}
    return metrics


def save_metrics(path: str | Path, metrics: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(metrics, indent=2) + "\n", encoding="utf-8")


def render_metrics(metrics: dict) -> str:
    lines = []
    if "setting" in metrics:
        lines.append(f"setting        {metrics['setting']}")
    lines.append(f"accuracy       {metrics['accuracy']:.4f}")
    per_level = "  ".join(f"L{i + 1}={a:.4f}" for i, a in enumerate(metrics["per_level"]))
    lines.append(f"per level      {per_level}")
    lines.append(f"n test         {metrics['n_test']}")
    return "\n".join(lines)

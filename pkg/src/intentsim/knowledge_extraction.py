"""Estimate chat-log statistics that drive conversation synthesis.

Three distributions are extracted from historical sessions: how many user
turns a conversation has, which leaf intent it opens with, and how intents
move turn-to-turn (a single time-invariant transition matrix, additively
smoothed so unseen transitions keep small nonzero mass).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus_model import ChatLogSession, IntentTaxonomy

DEFAULT_ALPHA = 0.1
DEFAULT_MAX_TURNS = 10


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class TurnDistribution:
    """P(number of user turns); counts above max_turns fold into the cap bucket."""

    probs: dict[int, float]
    max_turns: int

    def __post_init__(self):
        total = sum(self.probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"turn probabilities sum to {total}, expected 1")
        if any(p < 0 for p in self.probs.values()):
            raise ValueError("turn probabilities must be >= 0")
        if any(t < 1 or t > self.max_turns for t in self.probs):
            raise ValueError("turn counts must lie in [1, max_turns]")

    def support(self) -> list[int]:
        return sorted(self.probs)


@dataclass(frozen=True)
class IntentDistribution:
    """Probability vector over leaf intents, indexed by taxonomy leaf order."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if abs(float(self.probs.sum()) - 1.0) > 1e-9:
            raise ValueError(f"intent probabilities sum to {self.probs.sum()}")
        if (self.probs < 0).any():
            raise ValueError("intent probabilities must be >= 0")


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic |I| x |I| matrix over leaf intents, plus its smoothing alpha."""

    rows: np.ndarray
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=float))
        if self.rows.ndim != 2 or self.rows.shape[0] != self.rows.shape[1]:
            raise ValueError(f"transition matrix must be square, got {self.rows.shape}")
        sums = self.rows.sum(axis=1)
        if np.abs(sums - 1.0).max() > 1e-9:
            raise ValueError("every transition row must sum to 1")
        if self.alpha > 0 and (self.rows <= 0).any():
            raise ValueError("alpha > 0 guarantees strictly positive entries")


@dataclass
class DomainKnowledge:
    turn_dist: TurnDistribution
    init: IntentDistribution
    trans: TransitionMatrix
    leaf_order: list[str]

    def __post_init__(self):
        n = len(self.leaf_order)
        if self.init.probs.shape != (n,) or self.trans.rows.shape != (n, n):
            raise ValueError("distribution dimensions do not match leaf count")
        self._leaf_index = {leaf: i for i, leaf in enumerate(self.leaf_order)}

    def leaf_index(self, leaf_id: str) -> int:
        return self._leaf_index[leaf_id]

    def init_prob(self, leaf_id: str) -> float:
        return float(self.init.probs[self._leaf_index[leaf_id]])

    def trans_prob(self, prev_leaf: str, next_leaf: str) -> float:
        return float(self.trans.rows[self._leaf_index[prev_leaf], self._leaf_index[next_leaf]])


def _leaf_sequence(session: ChatLogSession, taxonomy: IntentTaxonomy) -> list[str | None]:
    """Leaf ids of the session's user utterances (None where unannotated)."""
    seq: list[str | None] = []
    for utt in session.user_utterances():
        if utt.inferred_intent is None:
            seq.append(None)
            continue
        leaf = utt.inferred_intent.leaf
        if leaf not in taxonomy.leaf_index:
            raise ExtractionError(f"intent leaf {leaf!r} is not in the taxonomy")
        seq.append(leaf)
    return seq


def estimate_turn_distribution(
    logs: Sequence[ChatLogSession], max_turns: int = DEFAULT_MAX_TURNS
) -> TurnDistribution:
    """Empirical distribution of user-turn counts, clipped to max_turns."""
    if not logs:
        raise ExtractionError("no sessions")
    if max_turns < 1:
        raise ExtractionError("max_turns must be >= 1")
    counts: dict[int, int] = {}
    n = 0
    for session in logs:
        t = len(session.user_utterances())
        if t == 0:
            continue
        t = min(t, max_turns)
        counts[t] = counts.get(t, 0) + 1
        n += 1
    if n == 0:
        raise ExtractionError("no sessions with user turns")
    probs = {t: c / n for t, c in counts.items()}
    return TurnDistribution(probs=probs, max_turns=max_turns)


def estimate_initial_distribution(
    logs: Sequence[ChatLogSession],
    taxonomy: IntentTaxonomy,
    alpha: float = DEFAULT_ALPHA,
) -> IntentDistribution:
    """Additively smoothed distribution of the first user turn's intent.

    probs[i] = (count_i + alpha) / (n_observed + alpha * |I|), where
    n_observed counts sessions whose opening user utterance carries an intent.
    """
    if not logs:
        raise ExtractionError("no sessions")
    if alpha < 0:
        raise ExtractionError("alpha must be >= 0")
    k = taxonomy.n_leaves()
    counts = np.zeros(k)
    for session in logs:
        seq = _leaf_sequence(session, taxonomy)
        if seq and seq[0] is not None:
            counts[taxonomy.leaf_index[seq[0]]] += 1
    total = counts.sum()
    if total == 0 and alpha == 0:
        raise ExtractionError("no observed initial intents and alpha=0")
    probs = (counts + alpha) / (total + alpha * k)
    return IntentDistribution(probs=probs)


def estimate_transition_matrix(
    logs: Sequence[ChatLogSession],
    taxonomy: IntentTaxonomy,
    alpha: float = DEFAULT_ALPHA,
) -> TransitionMatrix:
    """Additively smoothed transition matrix over adjacent user-turn intents.

    Counts are pooled over all adjacent pairs in all sessions (one matrix for
    every turn position). Rows with no observations fall back to uniform when
    alpha = 0 so the matrix stays row-stochastic.
    """
    if alpha < 0:
        raise ExtractionError("alpha must be >= 0")
    k = taxonomy.n_leaves()
    counts = np.zeros((k, k))
    for session in logs:
        seq = _leaf_sequence(session, taxonomy)
        for prev, nxt in zip(seq, seq[1:]):
            if prev is None or nxt is None:
                continue
            counts[taxonomy.leaf_index[prev], taxonomy.leaf_index[nxt]] += 1
    row_totals = counts.sum(axis=1, keepdims=True)
    if alpha > 0:
        rows = (counts + alpha) / (row_totals + alpha * k)
    else:
        rows = np.full((k, k), 1.0 / k)
        observed = row_totals[:, 0] > 0
        rows[observed] = counts[observed] / row_totals[observed]
    return TransitionMatrix(rows=rows, alpha=alpha)


def extract_knowledge(
    logs: Sequence[ChatLogSession],
    taxonomy: IntentTaxonomy,
    alpha: float = DEFAULT_ALPHA,
    max_turns: int = DEFAULT_MAX_TURNS,
    init_alpha: float | None = None,
) -> DomainKnowledge:
    """Run all three estimators; init_alpha defaults to the transition alpha."""
    return DomainKnowledge(
        turn_dist=estimate_turn_distribution(logs, max_turns=max_turns),
        init=estimate_initial_distribution(
            logs, taxonomy, alpha=alpha if init_alpha is None else init_alpha
        ),
        trans=estimate_transition_matrix(logs, taxonomy, alpha=alpha),
        leaf_order=list(taxonomy.leaf_order),
    )


# -- knowledge file format ----------------------------------------------------


def knowledge_to_dict(knowledge: DomainKnowledge) -> dict:
    return {
        "leaf_order": list(knowledge.leaf_order),
        "turn_dist": {str(t): p for t, p in sorted(knowledge.turn_dist.probs.items())},
        "max_turns": knowledge.turn_dist.max_turns,
        "init": knowledge.init.probs.tolist(),
        "trans": knowledge.trans.rows.tolist(),
        "alpha": knowledge.trans.alpha,
    }


def knowledge_from_dict(obj: dict) -> DomainKnowledge:
    for key in ("leaf_order", "turn_dist", "max_turns", "init", "trans", "alpha"):
        if key not in obj:
            raise ExtractionError(f"knowledge file missing {key!r}")
    return DomainKnowledge(
        turn_dist=TurnDistribution(
            probs={int(t): float(p) for t, p in obj["turn_dist"].items()},
            max_turns=int(obj["max_turns"]),
        ),
        init=IntentDistribution(probs=np.asarray(obj["init"], dtype=float)),
        trans=TransitionMatrix(rows=np.asarray(obj["trans"], dtype=float), alpha=float(obj["alpha"])),
        leaf_order=list(obj["leaf_order"]),
    )


def save_knowledge(path: str | Path, knowledge: DomainKnowledge) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(knowledge_to_dict(knowledge), indent=2) + "\n", encoding="utf-8")


def load_knowledge(path: str | Path) -> DomainKnowledge:
    with open(path, encoding="utf-8") as fh:
        return knowledge_from_dict(json.load(fh))

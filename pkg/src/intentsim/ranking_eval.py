"""Judge answers and sessions, and build contrastive answer pairs.

A second generator proposes an alternative final answer for a conversation;
a judge rates both candidates point-wise on a 1..10 scale against the same
history, and the higher-rated one becomes the positive side of a ranked
pair. Whole sessions get the same 1..10 treatment for corpus-level quality
reports broken down by origin.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from statistics import fmean
from typing import Iterable, Sequence

from .corpus_model import Conversation, dump_line, read_jsonl, write_jsonl
from .emission import (
    Message,
    TextGenerator,
    build_answer_prompt,
    load_template,
)

SESSION_RATING_FOOTER = (
    "STRICTLY answer only with a score, DO NOT explain or elaborate with any words."
)


class RatingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RankedPair:
    """A better/worse final-answer pair for one conversation."""

    session_id: str
    q_all: str
    better_answer: str
    worse_answer: str
    better_score: int
    worse_score: int
    tie: bool = False
    judges: tuple[str, ...] = ()

    def __post_init__(self):
        if self.better_score < self.worse_score:
            raise ValueError("better_score must be >= worse_score")


@dataclass(frozen=True)
class QualityReport:
    scores: tuple[int, ...]
    mean: float
    per_origin: dict[str, dict]

    def render_table(self) -> str:
        lines = [f"{'origin':<18} {'sessions':>8} {'mean rating':>12}"]
        for origin, row in self.per_origin.items():
            lines.append(f"{origin:<18} {row['n']:>8} {row['mean']:>12.2f}")
        lines.append(f"{'all':<18} {len(self.scores):>8} {self.mean:>12.2f}")
        return "\n".join(lines)


def q_all_of(conv: Conversation) -> str:
    return ", ".join(conv.questions())


def build_answer_rating_prompt(
    history: Sequence[tuple[str, str]], question: str, answer: str
) -> list[Message]:
    """Judge prompt for the final answer, given the full chat history."""
    lines = ["#chat history"]
    for past_q, past_a in history:
        lines.append(f"Customer: {past_q}")
        lines.append(f"Assistant: {past_a}")
    lines.append(f"Customer: {question}")
    lines.append("# Response")
    lines.append(f"Assistant: {answer}")
    return [Message("system", load_template("answer_rating")), Message("user", "\n".join(lines))]


def build_session_rating_prompt(conv: Conversation) -> list[Message]:
    """Judge prompt over a whole conversation transcript."""
    lines = ["# Conversation to be evaluated"]
    for turn in conv.turns:
        lines.append(f"customer: {turn.question}")
        lines.append(f"cs chatbot: {turn.answer}")
    lines.append("")
    lines.append(SESSION_RATING_FOOTER)
    return [Message("system", load_template("session_rating")), Message("user", "\n".join(lines))]


def parse_score(completion: str) -> int:
    match = re.search(r"-?\d+", completion)
    if match is None:
        raise RatingError(f"no integer score in completion {completion!r}")
    score = int(match.group())
    if not 1 <= score <= 10:
        raise RatingError(f"score {score} outside 1..10")
    return score


def _rate(judge: TextGenerator, messages: list[Message]) -> int:
    """Parse a 1..10 rating, re-asking once before giving up."""
    try:
        return parse_score(judge.complete(messages))
    except RatingError:
        return parse_score(judge.complete(messages))


def generate_alternative_answer(conv: Conversation, alt_gen: TextGenerator) -> str:
    """Produce a competing answer for the final turn from a second generator."""
    last = conv.turns[-1]
    history = conv.history(conv.n_turns)
    answer = alt_gen.complete(build_answer_prompt(history, last.question)).strip()
    if not answer:
        raise RatingError("alternative generator returned an empty answer")
    return answer


def rate_answer(
    judge: TextGenerator,
    history: Sequence[tuple[str, str]],
    question: str,
    answer: str,
) -> int:
    return _rate(judge, build_answer_rating_prompt(history, question, answer))


def rank_last_answers(
    judge: TextGenerator,
    conv: Conversation,
    alt_answer: str,
    judge_name: str = "judge",
) -> RankedPair:
    """Rate the pipeline answer and an alternative against the same context.

    The higher-scored answer wins; ties keep the pipeline answer as the
    better one and are flagged.
    """
    last = conv.turns[-1]
    history = conv.history(conv.n_turns)
    original_score = rate_answer(judge, history, last.question, last.answer)
    alt_score = rate_answer(judge, history, last.question, alt_answer)
    if alt_score > original_score:
        better, worse = (alt_answer, alt_score), (last.answer, original_score)
        tie = False
    else:
        better, worse = (last.answer, original_score), (alt_answer, alt_score)
        tie = alt_score == original_score
    return RankedPair(
        session_id=conv.session_id,
        q_all=q_all_of(conv),
        better_answer=better[0],
        worse_answer=worse[0],
        better_score=better[1],
        worse_score=worse[1],
        tie=tie,
        judges=(judge_name,),
    )


def rate_session_quality(judge: TextGenerator, conv: Conversation) -> int:
    return _rate(judge, build_session_rating_prompt(conv))


def rate_corpus_quality(judge: TextGenerator, corpus: Sequence[Conversation]) -> QualityReport:
    """Rate every session and aggregate means per origin (and overall)."""
    if not corpus:
        raise RatingError("cannot rate an empty corpus")
    scores = []
    by_origin: dict[str, list[int]] = {}
    for conv in corpus:
        score = rate_session_quality(judge, conv)
        scores.append(score)
        by_origin.setdefault(conv.origin, []).append(score)
    per_origin = {
        origin: {"n": len(vals), "mean": fmean(vals)} for origin, vals in sorted(by_origin.items())
    }
    return QualityReport(scores=tuple(scores), mean=fmean(scores), per_origin=per_origin)


# -- ranked-pair JSONL --------------------------------------------------------


def pair_to_dict(pair: RankedPair) -> dict:
    return {
        "session_id": pair.session_id,
        "q_all": pair.q_all,
        "a_plus": pair.better_answer,
        "a_minus": pair.worse_answer,
        "score_plus": pair.better_score,
        "score_minus": pair.worse_score,
        "tie": pair.tie,
    }


def pair_from_dict(obj: dict) -> RankedPair:
    for key in ("session_id", "q_all", "a_plus", "a_minus", "score_plus", "score_minus"):
        if key not in obj:
            raise ValueError(f"missing {key!r} field")
    return RankedPair(
        session_id=obj["session_id"],
        q_all=obj["q_all"],
        better_answer=obj["a_plus"],
        worse_answer=obj["a_minus"],
        better_score=int(obj["score_plus"]),
        worse_score=int(obj["score_minus"]),
        tie=bool(obj.get("tie", False)),
    )


def write_pairs(path: str | Path, pairs: Iterable[RankedPair]) -> int:
    return write_jsonl(path, pairs, pair_to_dict)


def read_pairs(path: str | Path, strict: bool = True) -> tuple[list[RankedPair], int]:
    return read_jsonl(path, pair_from_dict, strict=strict)

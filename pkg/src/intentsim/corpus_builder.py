"""End-to-end corpus generation, prefix expansion, and dataset statistics.

Each session gets its own derived seed, so corpora are reproducible no
matter how many sessions run in flight at once; output order always follows
the session index. Completed conversations are optionally paired with a
judged (better, worse) final-answer pair when alternative and judge
profiles are configured.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chain_sampler import (
    ExemplarPool,
    derive_seed,
    rng_from_seed,
    sample_chain,
    sample_random_chain,
)
from .corpus_model import (
    UNLABELED_INTENT,
    ChatLogSession,
    Conversation,
    IntentPath,
    IntentTaxonomy,
    Turn,
    read_jsonl,
    word_count,
    write_jsonl,
)
from .emission import (
    GenerationError,
    GeneratorProfile,
    emit_chain_of_intent,
    emit_classic,
    make_generator,
)
from .knowledge_extraction import DomainKnowledge
from .ranking_eval import RankedPair, generate_alternative_answer, rank_last_answers


class BuildError(RuntimeError):
    pass


@dataclass(frozen=True)
class BuildConfig:
    n_sessions: int
    base_seed: int = 0
    origin: str = "chain_of_intent"  # random | hmm | chain_of_intent
    language: str = "en"
    concurrency: int = 8
    max_failure_ratio: float = 0.1
    generator: GeneratorProfile = field(default_factory=lambda: GeneratorProfile(name="primary"))
    alternative: GeneratorProfile | None = None
    judge: GeneratorProfile | None = None
    classic_answer_text: str = ""

    def __post_init__(self):
        if self.n_sessions < 1:
            raise ValueError("n_sessions must be >= 1")
        if self.origin not in ("random", "hmm", "chain_of_intent"):
            raise ValueError(f"cannot build corpora with origin {self.origin!r}")
        if self.concurrency < 1:
            raise ValueError("concurrency must be >= 1")

    def wants_pairs(self) -> bool:
        return self.alternative is not None and self.judge is not None


@dataclass
class BuildResult:
    conversations: list[Conversation]
    pairs: list[RankedPair]
    n_requested: int
    failures: list[str]

    @property
    def n_failed(self) -> int:
        return len(self.failures)


def _build_session(
    index: int,
    knowledge: DomainKnowledge,
    pool: ExemplarPool,
    config: BuildConfig,
    taxonomy: IntentTaxonomy | None,
) -> tuple[Conversation, RankedPair | None]:
    seed = derive_seed(config.base_seed, index)
    rng = rng_from_seed(seed)
    session_id = f"{config.origin}-{index:05d}"
    if config.origin == "random":
        if taxonomy is None:
            raise BuildError("random origin requires the taxonomy")
        chain = sample_random_chain(knowledge.turn_dist, taxonomy, pool, rng, seed=seed)
    else:
        chain = sample_chain(knowledge, pool, rng, seed=seed)

    if config.origin == "chain_of_intent":
        gen = make_generator(config.generator)
        conv = emit_chain_of_intent(
            chain, gen, session_id=session_id, language=config.language, pool=pool
        )
    else:
        conv = emit_classic(
            chain,
            session_id=session_id,
            origin=config.origin,
            language=config.language,
            answer_text=config.classic_answer_text,
        )

    pair = None
    if config.wants_pairs():
        alt_gen = make_generator(config.alternative)
        judge = make_generator(config.judge)
        alt_answer = generate_alternative_answer(conv, alt_gen)
        pair = rank_last_answers(judge, conv, alt_answer, judge_name=config.judge.name)
    return conv, pair


def build_corpus(
    knowledge: DomainKnowledge,
    pool: ExemplarPool,
    config: BuildConfig,
    taxonomy: IntentTaxonomy | None = None,
) -> BuildResult:
    """Generate config.n_sessions conversations (plus ranked pairs when configured).

    Failed sessions are dropped and reported; the build aborts if more than
    max_failure_ratio of them fail.
    """
    results: dict[int, tuple[Conversation, RankedPair | None]] = {}
    failures: list[str] = []

    def run(index: int):
        return _build_session(index, knowledge, pool, config, taxonomy)

    indices = range(config.n_sessions)
    if config.concurrency == 1:
        outcomes = []
        for i in indices:
            try:
                outcomes.append((i, run(i), None))
            except GenerationError as exc:
                outcomes.append((i, None, exc))
    else:
        outcomes = []
        with ThreadPoolExecutor(max_workers=config.concurrency) as executor:
            futures = {i: executor.submit(run, i) for i in indices}
            for i in indices:
                try:
                    outcomes.append((i, futures[i].result(), None))
                except GenerationError as exc:
                    outcomes.append((i, None, exc))

    for i, outcome, error in outcomes:
        if error is not None:
            failures.append(f"session {i}: {error}")
        else:
            results[i] = outcome

    if len(failures) > config.max_failure_ratio * config.n_sessions:
        detail = "; ".join(failures[:5])
        raise BuildError(
            f"{len(failures)}/{config.n_sessions} sessions failed "
            f"(limit {config.max_failure_ratio:.0%}): {detail}"
        )
    conversations = [results[i][0] for i in sorted(results)]
    pairs = [results[i][1] for i in sorted(results) if results[i][1] is not None]
    return BuildResult(
        conversations=conversations,
        pairs=pairs,
        n_requested=config.n_sessions,
        failures=failures,
    )


# -- classification samples ---------------------------------------------------


@dataclass(frozen=True)
class ClassificationSample:
    """Comma-joined question prefix labelled with the intent of its last turn."""

    q_all: str
    intent: IntentPath
    n_turns_used: int = 1


def expand_prefixes(conv: Conversation) -> list[ClassificationSample]:
    """One sample per turn: questions 1..t joined by ", ", labelled with I_t."""
    samples = []
    questions = conv.questions()
    for t in range(1, conv.n_turns + 1):
        samples.append(
            ClassificationSample(
                q_all=", ".join(questions[:t]),
                intent=conv.turns[t - 1].intent,
                n_turns_used=t,
            )
        )
    return samples


def sample_to_dict(sample: ClassificationSample) -> dict:
    return {"q_all": sample.q_all, "intent": sample.intent.to_list()}


def sample_from_dict(obj: dict) -> ClassificationSample:
    for key in ("q_all", "intent"):
        if key not in obj:
            raise ValueError(f"missing {key!r} field")
    return ClassificationSample(q_all=obj["q_all"], intent=IntentPath.from_list(obj["intent"]))


def write_samples(path, samples: Iterable[ClassificationSample]) -> int:
    return write_jsonl(path, samples, sample_to_dict)


def read_samples(path, strict: bool = True) -> tuple[list[ClassificationSample], int]:
    return read_jsonl(path, sample_from_dict, strict=strict)


# -- binary response-ranking items ---------------------------------------------


@dataclass(frozen=True)
class RankingItem:
    """(context, answer) pair labelled 1 for judged-better, 0 for mismatched."""

    q_all: str
    answer: str
    label: int
    session_id: str


def make_ranking_negatives(
    corpus: Sequence[Conversation],
    pairs: Sequence[RankedPair],
    rng: np.random.Generator,
) -> list[RankingItem]:
    """Balance each positive answer with one drawn from a different final intent."""
    final_leaf = {conv.session_id: conv.turns[-1].intent.leaf for conv in corpus}
    final_answer = {conv.session_id: conv.turns[-1].answer for conv in corpus}
    items: list[RankingItem] = []
    for pair in pairs:
        own_leaf = final_leaf.get(pair.session_id)
        if own_leaf is None:
            raise BuildError(f"pair references unknown session {pair.session_id!r}")
        donors = [sid for sid, leaf in final_leaf.items() if leaf != own_leaf]
        if not donors:
            raise BuildError(
                f"no sessions with a final intent other than {own_leaf!r} to draw negatives from"
            )
        donor = donors[int(rng.integers(len(donors)))]
        items.append(RankingItem(pair.q_all, pair.better_answer, 1, pair.session_id))
        items.append(RankingItem(pair.q_all, final_answer[donor], 0, pair.session_id))
    return items


# -- corpus statistics ----------------------------------------------------------


@dataclass(frozen=True)
class StatsReport:
    n_sessions: int
    n_questions: int
    n_words: int
    avg_questions_per_session: float
    avg_words_per_question: float
    intent_frequency: dict[str, float]

    def render_table(self) -> str:
        rows = [
            ("# Sessions", f"{self.n_sessions}"),
            ("# Questions", f"{self.n_questions}"),
            ("# Words", f"{self.n_words}"),
            ("Avg. # questions per session", f"{self.avg_questions_per_session:.2f}"),
            ("Avg. # words per question", f"{self.avg_words_per_question:.2f}"),
        ]
        width = max(len(label) for label, _ in rows)
        lines = [f"{label:<{width}}  {value}" for label, value in rows]
        top = sorted(self.intent_frequency.items(), key=lambda kv: (-kv[1], kv[0]))[:15]
        if top:
            lines.append("")
            lines.append("Top intents by question-level ratio:")
            for leaf, ratio in top:
                lines.append(f"  {leaf:<{width}}  {ratio:.3f}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "n_sessions": self.n_sessions,
            "n_questions": self.n_questions,
            "n_words": self.n_words,
            "avg_questions_per_session": self.avg_questions_per_session,
            "avg_words_per_question": self.avg_words_per_question,
            "intent_frequency": self.intent_frequency,
        }


def corpus_stats(corpus: Sequence[Conversation]) -> StatsReport:
    """Whitespace word counts over questions, plus per-leaf question ratios."""
    if not corpus:
        raise BuildError("cannot compute statistics for an empty corpus")
    n_sessions = len(corpus)
    n_questions = 0
    n_words = 0
    leaf_counts: dict[str, int] = {}
    for conv in corpus:
        for turn in conv.turns:
            n_questions += 1
            n_words += word_count(turn.question)
            leaf_counts[turn.intent.leaf] = leaf_counts.get(turn.intent.leaf, 0) + 1
    return StatsReport(
        n_sessions=n_sessions,
        n_questions=n_questions,
        n_words=n_words,
        avg_questions_per_session=n_questions / n_sessions,
        avg_words_per_question=n_words / n_questions,
        intent_frequency={leaf: c / n_questions for leaf, c in sorted(leaf_counts.items())},
    )


def save_stats(path: str | Path, report: StatsReport) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")


# -- deterministic splits --------------------------------------------------------


def split_bucket(session_id: str) -> str:
    """80/10/10 train/val/test split keyed on a stable hash of the session id."""
    digest = hashlib.blake2b(session_id.encode(), digest_size=8).digest()
    bucket = int.from_bytes(digest, "big") % 10
    if bucket < 8:
        return "train"
    return "val" if bucket == 8 else "test"


def split_conversations(corpus: Iterable[Conversation]) -> dict[str, list[Conversation]]:
    out: dict[str, list[Conversation]] = {"train": [], "val": [], "test": []}
    for conv in corpus:
        out[split_bucket(conv.session_id)].append(conv)
    return out


# -- golden conversations from chat logs ------------------------------------------


def golden_from_chat_logs(
    logs: Sequence[ChatLogSession], language: str = "en"
) -> list[Conversation]:
    """Re-shape real chat logs as origin=golden conversations.

    Each user utterance pairs with the next agent reply (empty string when
    the agent never responded); unannotated turns carry the unlabeled
    sentinel intent.
    """
    conversations = []
    for session in logs:
        turns: list[Turn] = []
        pending_q: str | None = None
        pending_intent = UNLABELED_INTENT
        for utt in session.utterances:
            if utt.role == "user":
                if pending_q is not None:
                    turns.append(Turn(pending_q, pending_intent, ""))
                pending_q = utt.text
                pending_intent = utt.inferred_intent or UNLABELED_INTENT
            elif pending_q is not None:
                turns.append(Turn(pending_q, pending_intent, utt.text))
                pending_q = None
        if pending_q is not None:
            turns.append(Turn(pending_q, pending_intent, ""))
        if turns:
            conversations.append(
                Conversation(
                    session_id=session.session_id,
                    turns=tuple(turns),
                    origin="golden",
                    language=language,
                )
            )
    return conversations

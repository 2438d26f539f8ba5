from __future__ import annotations

import numpy as np
import pytest

import intentsim.corpus_builder as cb
from intentsim.chain_sampler import rng_from_seed
from intentsim.corpus_builder import (
    BuildConfig,
    BuildError,
    ClassificationSample,
    build_corpus,
    corpus_stats,
    expand_prefixes,
    golden_from_chat_logs,
    make_ranking_negatives,
    read_samples,
    split_bucket,
    split_conversations,
    write_samples,
)
from intentsim.corpus_model import (
    UNLABELED_INTENT,
    ChatLogSession,
    ChatLogUtterance,
    Conversation,
    IntentPath,
    Turn,
)
from intentsim.emission import GenerationError, GeneratorProfile, MockGenerator
from intentsim.ranking_eval import RankedPair

from conftest import make_session

PATH = IntentPath("r", "m", "A")


def mock_build_config(n=5, seed=7, origin="chain_of_intent", pairs=True, **kw):
    return BuildConfig(
        n_sessions=n,
        base_seed=seed,
        origin=origin,
        generator=GeneratorProfile(name="primary", seed=0),
        alternative=GeneratorProfile(name="alternative", seed=7) if pairs else None,
        judge=GeneratorProfile(name="judge", seed=3) if pairs else None,
        **kw,
    )


def test_build_corpus_deterministic(knowledge_24, pool_24, taxonomy_24):
    config = mock_build_config(n=5, seed=7)
    first = build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)
    second = build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)
    assert first.conversations == second.conversations
    assert first.pairs == second.pairs
    assert len(first.conversations) == 5
    assert len(first.pairs) == 5
    assert first.conversations[0].origin == "chain_of_intent"


def test_build_corpus_concurrency_invariant(knowledge_24, pool_24, taxonomy_24):
    sequential = build_corpus(
        knowledge_24, pool_24, mock_build_config(n=8, concurrency=1), taxonomy=taxonomy_24
    )
    threaded = build_corpus(
        knowledge_24, pool_24, mock_build_config(n=8, concurrency=4), taxonomy=taxonomy_24
    )
    assert sequential.conversations == threaded.conversations
    assert sequential.pairs == threaded.pairs


def test_hmm_origin_never_touches_generators(knowledge_24, pool_24, taxonomy_24, monkeypatch):
    def explode(profile):
        raise AssertionError("generator must not be constructed for classic emission")

    monkeypatch.setattr(cb, "make_generator", explode)
    config = mock_build_config(n=4, origin="hmm", pairs=False)
    result = build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)
    assert len(result.conversations) == 4
    assert result.conversations[0].origin == "hmm"
    for conv in result.conversations:
        assert all(t.answer == "" for t in conv.turns)


def test_random_origin_requires_taxonomy(knowledge_24, pool_24):
    config = mock_build_config(n=2, origin="random", pairs=False)
    with pytest.raises(BuildError, match="taxonomy"):
        build_corpus(knowledge_24, pool_24, config, taxonomy=None)


def test_random_origin_builds(knowledge_24, pool_24, taxonomy_24):
    config = mock_build_config(n=6, origin="random", pairs=False)
    result = build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)
    assert all(conv.origin == "random" for conv in result.conversations)


class _FailsForLeaf:
    """Mock that errors whenever the question prompt targets a given leaf."""

    def __init__(self, leaf):
        self.leaf = leaf
        self.inner = MockGenerator(GeneratorProfile(name="flaky"))

    def complete(self, messages):
        if messages[0].content.startswith("Forget") and f"intention {self.leaf}." in messages[0].content:
            raise GenerationError("flaky generator")
        return self.inner.complete(messages)


def test_failed_sessions_are_excluded_and_counted(knowledge_24, pool_24, taxonomy_24, monkeypatch):
    monkeypatch.setattr(cb, "make_generator", lambda profile: _FailsForLeaf("track_package"))
    config = mock_build_config(n=40, pairs=False, max_failure_ratio=0.9)
    result = build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)
    assert result.n_failed > 0
    assert len(result.conversations) + result.n_failed == result.n_requested
    for conv in result.conversations:
        assert all(t.intent.leaf != "track_package" for t in conv.turns)


def test_too_many_failures_abort(knowledge_24, pool_24, taxonomy_24, monkeypatch):
    class AlwaysFails:
        def complete(self, messages):
            raise GenerationError("down")

    monkeypatch.setattr(cb, "make_generator", lambda profile: AlwaysFails())
    config = mock_build_config(n=5, pairs=False)
    with pytest.raises(BuildError, match="5/5 sessions failed"):
        build_corpus(knowledge_24, pool_24, config, taxonomy=taxonomy_24)


# -- prefix expansion -----------------------------------------------------------


def conv_from_questions(questions, leaves=None, session_id="s"):
    leaves = leaves or ["A"] * len(questions)
    turns = tuple(
        Turn(q, IntentPath("r", "m", leaf), f"ans {session_id} {i}")
        for i, (q, leaf) in enumerate(zip(questions, leaves))
    )
    return Conversation(session_id, turns, origin="chain_of_intent")


def test_expand_prefixes_single_turn():
    samples = expand_prefixes(conv_from_questions(["only question"]))
    assert len(samples) == 1
    assert samples[0].q_all == "only question"
    assert samples[0].n_turns_used == 1


def test_expand_prefixes_concatenation_rule():
    samples = expand_prefixes(conv_from_questions(["a", "b", "c"]))
    assert [s.q_all for s in samples] == ["a", "a, b", "a, b, c"]


def test_expand_prefixes_intent_alignment():
    conv = conv_from_questions(["a", "b"], leaves=["A", "B"])
    samples = expand_prefixes(conv)
    assert [s.intent for s in samples] == [t.intent for t in conv.turns]


def test_expansion_cardinality(knowledge_24, pool_24, taxonomy_24):
    result = build_corpus(
        knowledge_24, pool_24, mock_build_config(n=10, pairs=False), taxonomy=taxonomy_24
    )
    samples = [s for conv in result.conversations for s in expand_prefixes(conv)]
    assert len(samples) == sum(conv.n_turns for conv in result.conversations)


def test_samples_jsonl_roundtrip(tmp_path):
    samples = expand_prefixes(conv_from_questions(["a", "b"]))
    path = tmp_path / "samples.jsonl"
    write_samples(path, samples)
    loaded, _ = read_samples(path)
    assert [(s.q_all, s.intent) for s in loaded] == [(s.q_all, s.intent) for s in samples]


# -- ranking negatives -------------------------------------------------------------


def make_pair(conv):
    return RankedPair(
        session_id=conv.session_id,
        q_all=", ".join(conv.questions()),
        better_answer=conv.turns[-1].answer,
        worse_answer="worse",
        better_score=8,
        worse_score=4,
    )


def test_ranking_negatives_balanced_and_disjoint():
    corpus = [
        conv_from_questions(["qa one"], leaves=["A"], session_id="sa"),
        conv_from_questions(["qb one"], leaves=["B"], session_id="sb"),
        conv_from_questions(["qc one"], leaves=["B"], session_id="sc"),
    ]
    pairs = [make_pair(c) for c in corpus]
    items = make_ranking_negatives(corpus, pairs, rng_from_seed(1))
    assert len(items) == 2 * len(pairs)
    final_leaf = {c.session_id: c.turns[-1].intent.leaf for c in corpus}
    final_answers = {c.turns[-1].answer: c.session_id for c in corpus}
    for pos, neg in zip(items[0::2], items[1::2]):
        assert pos.label == 1 and neg.label == 0
        assert neg.q_all == pos.q_all
        donor = final_answers[neg.answer]
        assert final_leaf[donor] != final_leaf[pos.session_id]


def test_ranking_negatives_deterministic():
    corpus = [
        conv_from_questions(["q1"], leaves=["A"], session_id="s1"),
        conv_from_questions(["q2"], leaves=["B"], session_id="s2"),
    ]
    pairs = [make_pair(c) for c in corpus]
    a = make_ranking_negatives(corpus, pairs, rng_from_seed(9))
    b = make_ranking_negatives(corpus, pairs, rng_from_seed(9))
    assert a == b


def test_ranking_negatives_need_two_intents():
    corpus = [conv_from_questions(["q1"], session_id="s1"), conv_from_questions(["q2"], session_id="s2")]
    pairs = [make_pair(corpus[0])]
    with pytest.raises(BuildError, match="final intent"):
        make_ranking_negatives(corpus, pairs, rng_from_seed(0))


# -- statistics -----------------------------------------------------------------------


def test_corpus_stats_hand_example():
    corpus = [
        conv_from_questions(["one two three four five", "a b c d e"], session_id="s1"),
        conv_from_questions(["1 2 3 4 5", "v w x y z", "six seven eight nine ten"], session_id="s2"),
    ]
    report = corpus_stats(corpus)
    assert report.n_sessions == 2
    assert report.n_questions == 5
    assert report.n_words == 25
    assert report.avg_questions_per_session == 2.5
    assert report.avg_words_per_question == 5.0
    assert report.intent_frequency == {"A": 1.0}


def test_stats_identities_hold_exactly(knowledge_24, pool_24, taxonomy_24):
    result = build_corpus(
        knowledge_24, pool_24, mock_build_config(n=12, pairs=False), taxonomy=taxonomy_24
    )
    report = corpus_stats(result.conversations)
    assert report.avg_questions_per_session == report.n_questions / report.n_sessions
    assert report.avg_words_per_question == report.n_words / report.n_questions
    assert sum(report.intent_frequency.values()) == pytest.approx(1.0)


def test_stats_table_mentions_core_rows():
    report = corpus_stats([conv_from_questions(["hello world"])])
    table = report.render_table()
    for label in ("# Sessions", "# Questions", "# Words", "Avg. # questions per session",
                  "Avg. # words per question"):
        assert label in table


def test_empty_corpus_stats_error():
    with pytest.raises(BuildError):
        corpus_stats([])


# -- splits -----------------------------------------------------------------------------


def test_split_bucket_deterministic_and_complete():
    ids = [f"session-{i}" for i in range(2000)]
    buckets = [split_bucket(s) for s in ids]
    assert buckets == [split_bucket(s) for s in ids]
    fractions = {name: buckets.count(name) / len(buckets) for name in ("train", "val", "test")}
    assert 0.75 < fractions["train"] < 0.85
    assert 0.05 < fractions["val"] < 0.15
    assert 0.05 < fractions["test"] < 0.15


def test_split_conversations_partition(knowledge_24, pool_24, taxonomy_24):
    result = build_corpus(
        knowledge_24, pool_24, mock_build_config(n=30, pairs=False), taxonomy=taxonomy_24
    )
    splits = split_conversations(result.conversations)
    assert sum(len(v) for v in splits.values()) == len(result.conversations)


# -- golden conversations ------------------------------------------------------------------


def test_golden_from_chat_logs(taxonomy_24):
    session = ChatLogSession(
        session_id="log7",
        utterances=(
            ChatLogUtterance("user", "first question", taxonomy_24.path_for_leaf("track_package")),
            ChatLogUtterance("agent", "first answer"),
            ChatLogUtterance("user", "second question", None),
        ),
    )
    golden = golden_from_chat_logs([session])
    assert len(golden) == 1
    conv = golden[0]
    assert conv.origin == "golden"
    assert conv.session_id == "log7"
    assert conv.turns[0].question == "first question"
    assert conv.turns[0].answer == "first answer"
    assert conv.turns[1].answer == ""
    assert conv.turns[1].intent == UNLABELED_INTENT


def test_golden_skips_empty_sessions():
    session = ChatLogSession("empty", (ChatLogUtterance("agent", "hello"),))
    assert golden_from_chat_logs([session]) == []

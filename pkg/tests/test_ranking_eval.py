from __future__ import annotations

import pytest

from intentsim.corpus_model import Conversation, IntentPath, Turn
from intentsim.emission import EMPTY_FIRST_MESSAGE, GeneratorProfile, MockGenerator
from intentsim.ranking_eval import (
    SESSION_RATING_FOOTER,
    QualityReport,
    RankedPair,
    RatingError,
    build_answer_rating_prompt,
    build_session_rating_prompt,
    generate_alternative_answer,
    parse_score,
    q_all_of,
    rank_last_answers,
    rate_answer,
    rate_corpus_quality,
    rate_session_quality,
    read_pairs,
    write_pairs,
)

PATH = IntentPath("r", "m", "A")


def fixture_conversation():
    return Conversation(
        session_id="fix1",
        turns=(
            Turn("where is my parcel", PATH, "it ships tomorrow"),
            Turn("can you expedite it", PATH, "yes, upgraded to express"),
        ),
        origin="chain_of_intent",
        language="en",
        seed=5,
    )


class ScriptedJudge:
    """Returns canned completions in order; records the prompts."""

    def __init__(self, completions):
        self.completions = list(completions)
        self.calls = []

    def complete(self, messages):
        self.calls.append(list(messages))
        return self.completions.pop(0)


# -- score parsing ------------------------------------------------------------


def test_parse_score_plain():
    assert parse_score("7") == 7
    assert parse_score(" 10 ") == 10
    assert parse_score("rating: 3") == 3


def test_parse_score_out_of_range():
    with pytest.raises(RatingError):
        parse_score("score: 11")
    with pytest.raises(RatingError):
        parse_score("0")
    with pytest.raises(RatingError):
        parse_score("no score here")


def test_rate_answer_reasks_once():
    judge = ScriptedJudge(["garbage", "6"])
    assert rate_answer(judge, [], "q", "a") == 6
    assert len(judge.calls) == 2

    judge = ScriptedJudge(["garbage", "still garbage"])
    with pytest.raises(RatingError):
        rate_answer(judge, [], "q", "a")


# -- prompt layouts ------------------------------------------------------------


def test_answer_rating_prompt_layout():
    messages = build_answer_rating_prompt([("q1", "a1")], "q2", "a2")
    assert [m.role for m in messages] == ["system", "user"]
    assert messages[1].content == (
        "#chat history\nCustomer: q1\nAssistant: a1\nCustomer: q2\n# Response\nAssistant: a2"
    )


def test_session_rating_prompt_layout():
    conv = fixture_conversation()
    messages = build_session_rating_prompt(conv)
    body = messages[1].content
    assert body.startswith("# Conversation to be evaluated\ncustomer: where is my parcel\n")
    assert "cs chatbot: yes, upgraded to express" in body
    assert body.endswith("\n\n" + SESSION_RATING_FOOTER)


# -- alternative answers ----------------------------------------------------------


def test_alternative_answer_mock_deterministic():
    conv = fixture_conversation()
    alt = MockGenerator(GeneratorProfile(name="alt", seed=7))
    assert generate_alternative_answer(conv, alt) == "mock-a[t=2] ok#7"


def test_alternatives_differ_across_seeds():
    conv = fixture_conversation()
    a = generate_alternative_answer(conv, MockGenerator(GeneratorProfile(name="a", seed=7)))
    b = generate_alternative_answer(conv, MockGenerator(GeneratorProfile(name="b", seed=13)))
    assert a != b


def test_alternative_single_turn_history_empty():
    conv = Conversation("s", (Turn("only q", PATH, "only a"),), origin="chain_of_intent")
    rec = ScriptedJudge(["an alternative"])
    assert generate_alternative_answer(conv, rec) == "an alternative"
    # prompt = system + the single question, no prior history
    assert [m.role for m in rec.calls[0]] == ["system", "user"]
    assert rec.calls[0][1].content == "only q"


# -- pairing ---------------------------------------------------------------------


def test_rank_prefers_original_on_higher_score():
    judge = ScriptedJudge(["8", "5"])
    pair = rank_last_answers(judge, fixture_conversation(), "alt answer")
    assert pair.better_answer == "yes, upgraded to express"
    assert (pair.better_score, pair.worse_score, pair.tie) == (8, 5, False)


def test_rank_prefers_alternative_on_higher_score():
    judge = ScriptedJudge(["5", "8"])
    pair = rank_last_answers(judge, fixture_conversation(), "alt answer")
    assert pair.better_answer == "alt answer"
    assert (pair.better_score, pair.worse_score, pair.tie) == (8, 5, False)


def test_rank_tie_keeps_original_and_flags():
    judge = ScriptedJudge(["6", "6"])
    pair = rank_last_answers(judge, fixture_conversation(), "alt answer")
    assert pair.better_answer == "yes, upgraded to express"
    assert pair.tie is True


def test_both_ratings_share_identical_context():
    judge = ScriptedJudge(["7", "4"])
    conv = fixture_conversation()
    rank_last_answers(judge, conv, "alt answer")
    first, second = judge.calls
    # identical except the final "Assistant:" line under "# Response"
    head1 = first[1].content.rsplit("Assistant: ", 1)[0]
    head2 = second[1].content.rsplit("Assistant: ", 1)[0]
    assert head1 == head2
    assert "# Response" in head1


def test_pair_invariant():
    with pytest.raises(ValueError):
        RankedPair("s", "q", "good", "bad", better_score=3, worse_score=8)


def test_q_all_join():
    assert q_all_of(fixture_conversation()) == "where is my parcel, can you expedite it"


# -- mock judge freeze --------------------------------------------------------------


def test_mock_judge_frozen_scores():
    conv = fixture_conversation()
    judge = MockGenerator(GeneratorProfile(name="judge", seed=3))
    assert rate_session_quality(judge, conv) == 9
    assert rate_answer(judge, conv.history(2), "can you expedite it", "yes, upgraded to express") == 9
    pair = rank_last_answers(judge, conv, "mock-a[t=2] ok#7")
    assert (pair.better_score, pair.worse_score, pair.tie) == (9, 4, False)
    assert pair.better_answer == "yes, upgraded to express"


# -- corpus quality -------------------------------------------------------------------


def conv_with(origin, session_id, question="hello there"):
    return Conversation(session_id, (Turn(question, PATH, "hi"),), origin=origin)


def test_corpus_quality_mean():
    judge = ScriptedJudge(["7", "8", "9"])
    report = rate_corpus_quality(judge, [conv_with("hmm", f"s{i}") for i in range(3)])
    assert report.mean == pytest.approx(8.0)
    assert report.scores == (7, 8, 9)


def test_corpus_quality_groups_origins():
    corpus = [
        conv_with("random", "s1"),
        conv_with("hmm", "s2"),
        conv_with("chain_of_intent", "s3"),
        conv_with("golden", "s4"),
        conv_with("golden", "s5"),
    ]
    judge = ScriptedJudge(["2", "4", "6", "8", "10"])
    report = rate_corpus_quality(judge, corpus)
    assert set(report.per_origin) == {"random", "hmm", "chain_of_intent", "golden"}
    assert report.per_origin["golden"] == {"n": 2, "mean": 9.0}
    table = report.render_table()
    for origin in ("random", "hmm", "chain_of_intent", "golden", "all"):
        assert origin in table


def test_empty_corpus_rejected():
    with pytest.raises(RatingError):
        rate_corpus_quality(ScriptedJudge([]), [])


# -- pair serialization ------------------------------------------------------------------


def test_pair_jsonl_roundtrip(tmp_path):
    pair = RankedPair(
        session_id="s1",
        q_all="q1, q2",
        better_answer="good",
        worse_answer="bad",
        better_score=8,
        worse_score=3,
        tie=False,
    )
    path = tmp_path / "pairs.jsonl"
    write_pairs(path, [pair])
    loaded, _ = read_pairs(path)
    assert loaded == [pair]
    first_line = path.read_text().splitlines()[0]
    assert '"a_plus": "good"' in first_line and '"score_minus": 3' in first_line

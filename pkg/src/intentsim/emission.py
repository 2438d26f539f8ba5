"""Turn intent chains into conversations.

Two emission modes: the classic one copies each turn's exemplar question
verbatim (no generator involved), while the context-aware one drives a text
generator with the accumulated dialogue history so each question can refer
back to earlier turns.

Generators are pluggable behind a one-method interface. The offline mock is
a pure function of (messages, profile seed) with a parseable output contract,
so whole corpora are reproducible byte-for-byte without any network. The HTTP
generator speaks the chat-completions wire format:

    POST {endpoint}  {"model", "messages": [{"role", "content"}],
                      "temperature", "max_tokens"}
    -> completion text at choices[0].message.content

API keys come from an environment variable named by the profile, never from
config files.
"""
from __future__ import annotations

import hashlib
import re
import time
from dataclasses import dataclass, field
from importlib import resources
from typing import Protocol, Sequence

import requests

from .chain_sampler import ExemplarPool, IntentChain, rng_from_seed
from .corpus_model import Conversation, IntentPath, Turn

# The first user message of a question prompt; the customer-role generator
# "completes" a conversation it nominally opens, so the slot is a sentinel.
EMPTY_FIRST_MESSAGE = "{empty first message}"

MAX_PROMPT_EXEMPLARS = 3

_QUESTION_HEAD = "Forget that you are an OpenAI chatbot assistant"
_ANSWER_HEAD = "Pretend that you are a customer service agent"
_ANSWER_JUDGE_HEAD = (
    "Please act as an impartial judge and evaluate the quality of the response"
)
_SESSION_JUDGE_HEAD = (
    "Please act as an impartial judge and evaluate the quality of the conversation"
)


class GenerationError(RuntimeError):
    pass


class TurnGenerationError(GenerationError):
    """A turn could not be generated; carries session/turn coordinates."""

    def __init__(self, message: str, turn_index: int, session_id: str | None = None):
        where = f"session {session_id}, " if session_id else ""
        super().__init__(f"{where}turn {turn_index}: {message}")
        self.turn_index = turn_index
        self.session_id = session_id


@dataclass(frozen=True)
class Message:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"unknown role {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class GeneratorProfile:
    """Connection and decoding settings for one text generator."""

    name: str
    endpoint: str = "mock"  # "mock" or a chat-completions URL
    model_id: str = "mock-model"
    temperature: float = 0.7
    max_tokens: int = 256
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.25
    seed: int = 0
    api_key_env: str = "INTENTSIM_API_KEY"

    def __post_init__(self):
        if self.timeout <= 0:
            raise ValueError("timeout must be > 0")
        if self.retries < 0:
            raise ValueError("retries must be >= 0")

    @classmethod
    def from_dict(cls, obj: dict) -> "GeneratorProfile":
        return cls(**obj)


class TextGenerator(Protocol):
    def complete(self, messages: Sequence[Message]) -> str: ...


def load_template(name: str) -> str:
    """Read a shipped prompt template (question, answer, answer_rating, session_rating)."""
    return (
        resources.files("intentsim.prompts").joinpath(f"{name}.txt").read_text("utf-8").rstrip("\n")
    )


def render_exemplars(exemplars: Sequence[str]) -> str:
    return "\n".join(f" - {e}" for e in exemplars)


def build_question_prompt(
    intent: IntentPath | str,
    exemplars: Sequence[str],
    history: Sequence[tuple[str, str]],
    template: str | None = None,
) -> list[Message]:
    """Prompt asking the generator to play the customer and pose question t.

    The generator speaks in the assistant role, so history is rendered with
    prior questions as assistant messages and prior answers as user messages,
    opened by the empty-message sentinel. The intent is labelled by its leaf id.
    """
    if not exemplars:
        raise ValueError("at least one exemplar is required")
    label = intent.leaf if isinstance(intent, IntentPath) else intent
    system = (template or load_template("question")).format(
        cn=label, intent=label, examples=render_exemplars(exemplars[:MAX_PROMPT_EXEMPLARS])
    )
    messages = [Message("system", system), Message("user", EMPTY_FIRST_MESSAGE)]
    for question, answer in history:
        messages.append(Message("assistant", question))
        messages.append(Message("user", answer))
    return messages


def build_answer_prompt(
    history: Sequence[tuple[str, str]],
    question: str,
    template: str | None = None,
) -> list[Message]:
    """Prompt asking the generator to play the support agent and answer q_t."""
    messages = [Message("system", template or load_template("answer"))]
    for past_q, past_a in history:
        messages.append(Message("user", past_q))
        messages.append(Message("assistant", past_a))
    messages.append(Message("user", question))
    return messages


def _stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "big")


class MockGenerator:
    """Deterministic offline generator keyed to the shipped prompt templates.

    Output contract (used by tests to parse generated corpora):
      question prompts -> "mock-q[<leaf>][t=<t>] <first 5 words of exemplar>"
      answer prompts   -> "mock-a[t=<t>] ok" (seed != 0 appends "#<seed>")
      judge prompts    -> integer 1..10 hashed from (seed, final answer text)
    """

    def __init__(self, profile: GeneratorProfile):
        self.profile = profile

    def complete(self, messages: Sequence[Message]) -> str:
        if not messages or messages[0].role != "system":
            raise GenerationError("mock generator expects a leading system message")
        system = messages[0].content
        if system.startswith(_QUESTION_HEAD):
            return self._question(system, messages)
        if system.startswith(_ANSWER_HEAD):
            return self._answer(messages)
        if system.startswith(_ANSWER_JUDGE_HEAD):
            return self._judge(messages, line_prefix="Assistant: ")
        if system.startswith(_SESSION_JUDGE_HEAD):
            return self._judge(messages, line_prefix="cs chatbot: ")
        raise GenerationError("mock generator got an unrecognized prompt")

    def _question(self, system: str, messages: Sequence[Message]) -> str:
        turn = sum(1 for m in messages if m.role == "assistant") + 1
        leaf_match = re.search(r"utterance should have intention (.+?)\. Omit", system)
        exemplar_match = re.search(r"^ - (.+)$", system, flags=re.MULTILINE)
        if not leaf_match or not exemplar_match:
            raise GenerationError("mock generator could not parse the question prompt")
        words = " ".join(exemplar_match.group(1).split()[:5])
        return f"mock-q[{leaf_match.group(1)}][t={turn}] {words}"

    def _answer(self, messages: Sequence[Message]) -> str:
        turn = sum(1 for m in messages if m.role == "user")
        suffix = f"#{self.profile.seed}" if self.profile.seed else ""
        return f"mock-a[t={turn}] ok{suffix}"

    def _judge(self, messages: Sequence[Message], line_prefix: str) -> str:
        target = ""
        for message in messages:
            if message.role != "user":
                continue
            for line in message.content.splitlines():
                if line.startswith(line_prefix):
                    target = line[len(line_prefix):]
        score = 1 + _stable_hash(f"{self.profile.seed}|{target}") % 10
        return str(score)


class OpenAICompatGenerator:
    """Chat-completions client with exponential-backoff retries."""

    RETRY_STATUS = {429, 500, 502, 503, 504}

    def __init__(self, profile: GeneratorProfile, session: requests.Session | None = None):
        self.profile = profile
        self.session = session or requests.Session()

    def _headers(self) -> dict:
        import os

        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.profile.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, messages: Sequence[Message]) -> str:
        body = {
            "model": self.profile.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": self.profile.temperature,
            "max_tokens": self.profile.max_tokens,
        }
        last_error: Exception | None = None
        for attempt in range(self.profile.retries):
            try:
                response = self.session.post(
                    self.profile.endpoint,
                    json=body,
                    headers=self._headers(),
                    timeout=self.profile.timeout,
                )
                if response.status_code in self.RETRY_STATUS:
                    raise GenerationError(f"server returned {response.status_code}")
                response.raise_for_status()
                payload = response.json()
                return payload["choices"][0]["message"]["content"]
            except (requests.RequestException, GenerationError, KeyError, IndexError) as exc:
                last_error = exc
                if attempt + 1 < self.profile.retries:
                    time.sleep(self.profile.backoff * (2**attempt))
        raise GenerationError(
            f"generator {self.profile.name!r} failed after {self.profile.retries} attempts: {last_error}"
        )


def make_generator(profile: GeneratorProfile) -> TextGenerator:
    if profile.endpoint == "mock":
        return MockGenerator(profile)
    return OpenAICompatGenerator(profile)


def generate_turn(
    gen: TextGenerator,
    intent: IntentPath | str,
    exemplars: Sequence[str],
    history: Sequence[tuple[str, str]],
    answer_gen: TextGenerator | None = None,
) -> tuple[str, str]:
    """Generate (q_t, a_t): the question first, then its answer given q_t."""
    question = gen.complete(build_question_prompt(intent, exemplars, history)).strip()
    if not question:
        raise GenerationError("empty question completion")
    answer_source = answer_gen if answer_gen is not None else gen
    answer = answer_source.complete(build_answer_prompt(history, question)).strip()
    if not answer:
        raise GenerationError("empty answer completion")
    return question, answer


def emit_classic(
    chain: IntentChain,
    session_id: str,
    origin: str = "hmm",
    language: str = "en",
    answer_text: str = "",
) -> Conversation:
    """Identity emission: each question is the chain's exemplar, verbatim.

    No generator is involved; answers are a constant filler (default empty).
    """
    turns = tuple(
        Turn(question=ex.text, intent=intent, answer=answer_text)
        for intent, ex in zip(chain.intents, chain.exemplars)
    )
    return Conversation(
        session_id=session_id, turns=turns, origin=origin, language=language, seed=chain.seed
    )


def emit_chain_of_intent(
    chain: IntentChain,
    gen: TextGenerator,
    answer_gen: TextGenerator | None = None,
    session_id: str = "s0",
    language: str = "en",
    pool: ExemplarPool | None = None,
) -> Conversation:
    """Context-aware emission: generate each turn conditioned on all prior turns.

    The turn-t prompt history is exactly the (q, a) pairs of turns 1..t-1. Any
    turn failure aborts the whole session; partial conversations are never
    returned. When a pool is given, up to three exemplars (the chain's plus
    extra draws, with replacement for small intents) illustrate each prompt.
    """
    exemplar_rng = rng_from_seed(chain.seed ^ 0x9E3779B97F4A7C15) if pool is not None else None
    history: list[tuple[str, str]] = []
    turns = []
    for t, (intent, exemplar) in enumerate(zip(chain.intents, chain.exemplars), start=1):
        exemplar_texts = [exemplar.text]
        if pool is not None and exemplar_rng is not None:
            extras = pool.sample_many(intent.leaf, MAX_PROMPT_EXEMPLARS - 1, exemplar_rng)
            exemplar_texts.extend(e.text for e in extras)
        try:
            question, answer = generate_turn(
                gen, intent, exemplar_texts, history, answer_gen=answer_gen
            )
        except GenerationError as exc:
            raise TurnGenerationError(str(exc), turn_index=t, session_id=session_id) from exc
        turns.append(Turn(question=question, intent=intent, answer=answer))
        history.append((question, answer))
    return Conversation(
        session_id=session_id,
        turns=tuple(turns),
        origin="chain_of_intent",
        language=language,
        seed=chain.seed,
    )

"""Core domain types shared by every stage of the pipeline.

Intents live in a three-level taxonomy and are carried around as full
root-to-leaf paths so downstream consumers (transition estimation,
hierarchy losses, beam search) never need reverse lookups. All record
types serialize to JSONL, one object per line.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

ORIGINS = ("golden", "random", "hmm", "chain_of_intent")

# Sentinel for golden-set turns whose intent was never annotated.
UNLABELED = "unlabeled"


class TaxonomyError(ValueError):
    """Raised when a taxonomy file violates the tree constraints."""


class JsonlError(ValueError):
    """Raised for malformed JSONL records; carries the 1-based line number."""

    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


@dataclass(frozen=True, order=True)
class IntentPath:
    """Full root-to-leaf intent label (level-1, level-2, level-3 node ids)."""

    level1_id: str
    level2_id: str
    level3_id: str

    @property
    def leaf(self) -> str:
        return self.level3_id

    def is_unlabeled(self) -> bool:
        return self.level3_id == UNLABELED

    def to_list(self) -> list[str]:
        return [self.level1_id, self.level2_id, self.level3_id]

    @classmethod
    def from_list(cls, parts: Sequence[str]) -> "IntentPath":
        if len(parts) != 3 or not all(isinstance(p, str) and p for p in parts):
            raise ValueError(f"intent must be 3 non-empty strings, got {parts!r}")
        return cls(parts[0], parts[1], parts[2])


UNLABELED_INTENT = IntentPath(UNLABELED, UNLABELED, UNLABELED)


@dataclass(frozen=True)
class TaxonomyNode:
    id: str
    name: str
    level: int
    parent_id: str | None = None


class IntentTaxonomy:
    """Validated three-level intent tree.

    Node order follows the source file; leaf order (level-3 nodes in file
    order) is the canonical index used by every vector/matrix over intents.
    """

    def __init__(self, nodes: Sequence[TaxonomyNode]):
        self.nodes = list(nodes)
        self._by_id = {}
        for node in self.nodes:
            if node.id in self._by_id:
                raise TaxonomyError(f"duplicate node id {node.id!r}")
            self._by_id[node.id] = node
        self._validate()
        self.level_nodes = {
            lvl: [n for n in self.nodes if n.level == lvl] for lvl in (1, 2, 3)
        }
        self.leaves = self.level_nodes[3]
        self.leaf_order = [n.id for n in self.leaves]
        self.leaf_index = {nid: i for i, nid in enumerate(self.leaf_order)}

    def _validate(self) -> None:
        for node in self.nodes:
            if node.level not in (1, 2, 3):
                raise TaxonomyError(f"node {node.id!r} has invalid level {node.level}")
            if node.level == 1:
                if node.parent_id is not None:
                    raise TaxonomyError(f"level-1 node {node.id!r} must not have a parent")
                continue
            if node.parent_id is None:
                raise TaxonomyError(f"node {node.id!r} at level {node.level} has no parent")
            parent = self._by_id.get(node.parent_id)
            if parent is None:
                raise TaxonomyError(f"node {node.id!r} points to missing parent {node.parent_id!r}")
            if parent.level != node.level - 1:
                raise TaxonomyError(
                    f"node {node.id!r} (level {node.level}) has parent "
                    f"{parent.id!r} at level {parent.level}, expected {node.level - 1}"
                )
        for lvl in (1, 2, 3):
            if not any(n.level == lvl for n in self.nodes):
                raise TaxonomyError(f"taxonomy has no level-{lvl} nodes")

    def node(self, node_id: str) -> TaxonomyNode:
        return self._by_id[node_id]

    def n_leaves(self) -> int:
        return len(self.leaves)

    def children(self, node_id: str) -> list[TaxonomyNode]:
        return [n for n in self.nodes if n.parent_id == node_id]

    def path_for_leaf(self, leaf_id: str) -> IntentPath:
        leaf = self._by_id[leaf_id]
        if leaf.level != 3:
            raise TaxonomyError(f"{leaf_id!r} is not a leaf node")
        mid = self._by_id[leaf.parent_id]
        root = self._by_id[mid.parent_id]
        return IntentPath(root.id, mid.id, leaf.id)

    def is_valid_path(self, path: IntentPath) -> bool:
        leaf = self._by_id.get(path.level3_id)
        mid = self._by_id.get(path.level2_id)
        root = self._by_id.get(path.level1_id)
        if leaf is None or mid is None or root is None:
            return False
        return (
            leaf.level == 3
            and mid.level == 2
            and root.level == 1
            and leaf.parent_id == mid.id
            and mid.parent_id == root.id
        )

    def check_path(self, path: IntentPath) -> IntentPath:
        """Validate a path (the unlabeled sentinel is always accepted)."""
        if path.is_unlabeled():
            return path
        if not self.is_valid_path(path):
            raise TaxonomyError(f"intent {path.to_list()} is not a valid root-to-leaf path")
        return path


def load_taxonomy(path: str | Path) -> IntentTaxonomy:
    """Load and validate a taxonomy JSON file ({"nodes": [...]})."""
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise TaxonomyError(f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict) or "nodes" not in raw:
        raise TaxonomyError(f"{path}: expected an object with a 'nodes' array")
    nodes = []
    for entry in raw["nodes"]:
        try:
            nodes.append(
                TaxonomyNode(
                    id=entry["id"],
                    name=entry["name"],
                    level=int(entry["level"]),
                    parent_id=entry.get("parent_id"),
                )
            )
        except (KeyError, TypeError) as exc:
            raise TaxonomyError(f"{path}: bad node entry {entry!r}: {exc}") from exc
    return IntentTaxonomy(nodes)


@dataclass(frozen=True)
class SingleTurnExample:
    """A standalone question with its labelled intent."""

    text: str
    intent: IntentPath

    def __post_init__(self):
        if not self.text:
            raise ValueError("example text must be non-empty")


@dataclass(frozen=True)
class Turn:
    question: str
    intent: IntentPath
    answer: str

    def __post_init__(self):
        if not self.question:
            raise ValueError("turn question must be non-empty")


@dataclass(frozen=True)
class Conversation:
    """One multi-turn session; ``turns[: t - 1]`` is the history before turn t."""

    session_id: str
    turns: tuple[Turn, ...]
    origin: str
    language: str = "en"
    seed: int | None = None

    def __post_init__(self):
        if self.origin not in ORIGINS:
            raise ValueError(f"origin must be one of {ORIGINS}, got {self.origin!r}")
        if not self.turns:
            raise ValueError("conversation needs at least one turn")
        object.__setattr__(self, "turns", tuple(self.turns))

    @property
    def n_turns(self) -> int:
        return len(self.turns)

    def questions(self) -> list[str]:
        return [t.question for t in self.turns]

    def history(self, t: int) -> list[tuple[str, str]]:
        """(question, answer) pairs of turns 1..t-1 (t is 1-based)."""
        return [(turn.question, turn.answer) for turn in self.turns[: t - 1]]


@dataclass(frozen=True)
class ChatLogUtterance:
    role: str  # "user" | "agent"
    text: str
    inferred_intent: IntentPath | None = None


@dataclass(frozen=True)
class ChatLogSession:
    session_id: str
    utterances: tuple[ChatLogUtterance, ...]

    def __post_init__(self):
        object.__setattr__(self, "utterances", tuple(self.utterances))

    def user_utterances(self) -> list[ChatLogUtterance]:
        return [u for u in self.utterances if u.role == "user"]


# -- JSONL (de)serialization ------------------------------------------------
#
# One JSON object per line, UTF-8. Writers emit keys in a fixed order so
# repeated runs are byte-identical; readers report the offending line number
# and either abort (strict) or skip and count (lenient).


def example_to_dict(ex: SingleTurnExample) -> dict:
    return {"text": ex.text, "intent": ex.intent.to_list()}


def example_from_dict(obj: dict) -> SingleTurnExample:
    for key in ("text", "intent"):
        if key not in obj:
            raise ValueError(f"missing {key!r} field")
    return SingleTurnExample(text=obj["text"], intent=IntentPath.from_list(obj["intent"]))


def conversation_to_dict(conv: Conversation) -> dict:
    return {
        "session_id": conv.session_id,
        "origin": conv.origin,
        "language": conv.language,
        "seed": conv.seed,
        "turns": [
            {"question": t.question, "intent": t.intent.to_list(), "answer": t.answer}
            for t in conv.turns
        ],
    }


def conversation_from_dict(obj: dict) -> Conversation:
    for key in ("session_id", "origin", "language", "turns"):
        if key not in obj:
            raise ValueError(f"missing {key!r} field")
    turns = []
    for t in obj["turns"]:
        for key in ("question", "intent", "answer"):
            if key not in t:
                raise ValueError(f"turn missing {key!r} field")
        turns.append(
            Turn(
                question=t["question"],
                intent=IntentPath.from_list(t["intent"]),
                answer=t["answer"],
            )
        )
    return Conversation(
        session_id=obj["session_id"],
        turns=tuple(turns),
        origin=obj["origin"],
        language=obj["language"],
        seed=obj.get("seed"),
    )


def chat_log_to_dict(session: ChatLogSession) -> dict:
    return {
        "session_id": session.session_id,
        "utterances": [
            {
                "role": u.role,
                "text": u.text,
                "intent": u.inferred_intent.to_list() if u.inferred_intent else None,
            }
            for u in session.utterances
        ],
    }


def chat_log_from_dict(obj: dict) -> ChatLogSession:
    for key in ("session_id", "utterances"):
        if key not in obj:
            raise ValueError(f"missing {key!r} field")
    utterances = []
    for u in obj["utterances"]:
        for key in ("role", "text"):
            if key not in u:
                raise ValueError(f"utterance missing {key!r} field")
        if u["role"] not in ("user", "agent"):
            raise ValueError(f"utterance role must be user|agent, got {u['role']!r}")
        intent = u.get("intent")
        utterances.append(
            ChatLogUtterance(
                role=u["role"],
                text=u["text"],
                inferred_intent=IntentPath.from_list(intent) if intent else None,
            )
        )
    return ChatLogSession(session_id=obj["session_id"], utterances=tuple(utterances))


def dump_line(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable, to_dict: Callable) -> int:
    """Write records through ``to_dict``; returns the record count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with path.open("w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(dump_line(to_dict(rec)) + "\n")
            n += 1
    return n


def read_jsonl(
    path: str | Path,
    from_dict: Callable,
    strict: bool = True,
) -> tuple[list, int]:
    """Read records through ``from_dict``.

    Returns (records, n_skipped). Strict mode raises JsonlError on the first
    bad line; lenient mode skips bad lines and counts them.
    """
    records: list = []
    skipped = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(from_dict(json.loads(line)))
            except (json.JSONDecodeError, ValueError, TypeError) as exc:
                if strict:
                    raise JsonlError(line_no, str(exc)) from exc
                skipped += 1
    return records, skipped


def write_examples(path, examples: Iterable[SingleTurnExample]) -> int:
    return write_jsonl(path, examples, example_to_dict)


def read_examples(path, strict: bool = True) -> tuple[list[SingleTurnExample], int]:
    return read_jsonl(path, example_from_dict, strict=strict)


def write_conversations(path, conversations: Iterable[Conversation]) -> int:
    return write_jsonl(path, conversations, conversation_to_dict)


def read_conversations(path, strict: bool = True) -> tuple[list[Conversation], int]:
    return read_jsonl(path, conversation_from_dict, strict=strict)


def write_chat_logs(path, sessions: Iterable[ChatLogSession]) -> int:
    return write_jsonl(path, sessions, chat_log_to_dict)


def read_chat_logs(path, strict: bool = True) -> tuple[list[ChatLogSession], int]:
    return read_jsonl(path, chat_log_from_dict, strict=strict)


def word_count(text: str) -> int:
    """Whitespace-token count; the word unit used by all corpus statistics."""
    return len(text.split())

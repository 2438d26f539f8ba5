"""Shared fixtures: taxonomies, synthetic datasets, knowledge, mock profiles."""
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

from intentsim.chain_sampler import ExemplarPool
from intentsim.corpus_model import (
    ChatLogSession,
    ChatLogUtterance,
    IntentTaxonomy,
    SingleTurnExample,
    TaxonomyNode,
    load_taxonomy,
)
from intentsim.emission import GeneratorProfile
from intentsim.knowledge_extraction import (
    DomainKnowledge,
    IntentDistribution,
    TransitionMatrix,
    TurnDistribution,
)

DATA_DIR = Path(__file__).parent / "data"

QUESTION_PATTERNS = (
    "please help me {w} now",
    "i need to {w} for my order",
    "hi can you {w} today",
    "question about {w} on the app",
    "how do i {w} here",
)
SUFFIXES = ("", " thanks", " asap", " soon")


def tiny_taxonomy_nodes() -> list[TaxonomyNode]:
    return [
        TaxonomyNode("r1", "Root", 1),
        TaxonomyNode("m1", "Mid", 2, "r1"),
        TaxonomyNode("A", "intent a", 3, "m1"),
        TaxonomyNode("B", "intent b", 3, "m1"),
    ]


@pytest.fixture(scope="session")
def tiny_taxonomy() -> IntentTaxonomy:
    return IntentTaxonomy(tiny_taxonomy_nodes())


@pytest.fixture(scope="session")
def taxonomy_24() -> IntentTaxonomy:
    return load_taxonomy(DATA_DIR / "taxonomy_24.json")


def synth_single_turn(
    taxonomy: IntentTaxonomy, per_leaf: int = 10, seed: int = 0
) -> list[SingleTurnExample]:
    """Deterministic leaf-correlated questions: every pattern keeps the leaf
    words inside the first five tokens so downstream mock questions stay
    intent-bearing."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    examples = []
    for leaf in taxonomy.leaf_order:
        path = taxonomy.path_for_leaf(leaf)
        words = leaf.replace("_", " ")
        for i in range(per_leaf):
            pattern = QUESTION_PATTERNS[i % len(QUESTION_PATTERNS)]
            suffix = SUFFIXES[int(rng.integers(len(SUFFIXES)))]
            examples.append(SingleTurnExample(text=pattern.format(w=words) + suffix, intent=path))
    return examples


def synth_knowledge(
    taxonomy: IntentTaxonomy,
    turn_probs: dict[int, float] | None = None,
    alpha: float = 0.1,
    sibling_weight: float = 0.6,
) -> DomainKnowledge:
    """Hand-built knowledge: mildly tilted initial intents, transitions that
    favour same-level-2 siblings over arbitrary jumps."""
    if turn_probs is None:
        turn_probs = {1: 0.6, 2: 0.3, 3: 0.1}
    k = taxonomy.n_leaves()
    init = np.array([1.0 + (i % 3) for i in range(k)])
    init /= init.sum()
    parents = [taxonomy.node(leaf).parent_id for leaf in taxonomy.leaf_order]
    rows = np.zeros((k, k))
    for i in range(k):
        siblings = np.array([parents[j] == parents[i] for j in range(k)], dtype=float)
        rows[i] = sibling_weight * siblings / siblings.sum() + (1 - sibling_weight) / k
    rows /= rows.sum(axis=1, keepdims=True)
    max_turns = max(turn_probs)
    return DomainKnowledge(
        turn_dist=TurnDistribution(probs=dict(turn_probs), max_turns=max_turns),
        init=IntentDistribution(probs=init),
        trans=TransitionMatrix(rows=rows, alpha=alpha),
        leaf_order=list(taxonomy.leaf_order),
    )


def make_session(
    session_id: str,
    leaf_sequence: list[str | None],
    taxonomy: IntentTaxonomy,
    with_agent_replies: bool = True,
) -> ChatLogSession:
    utterances = []
    for i, leaf in enumerate(leaf_sequence):
        intent = taxonomy.path_for_leaf(leaf) if leaf else None
        utterances.append(
            ChatLogUtterance(role="user", text=f"user message {i + 1}", inferred_intent=intent)
        )
        if with_agent_replies:
            utterances.append(ChatLogUtterance(role="agent", text=f"agent reply {i + 1}"))
    return ChatLogSession(session_id=session_id, utterances=tuple(utterances))


@pytest.fixture(scope="session")
def single_turn_24(taxonomy_24) -> list[SingleTurnExample]:
    return synth_single_turn(taxonomy_24, per_leaf=10, seed=0)


@pytest.fixture(scope="session")
def pool_24(single_turn_24) -> ExemplarPool:
    return ExemplarPool(single_turn_24)


@pytest.fixture(scope="session")
def knowledge_24(taxonomy_24) -> DomainKnowledge:
    return synth_knowledge(taxonomy_24)


@pytest.fixture
def mock_primary() -> GeneratorProfile:
    return GeneratorProfile(name="primary", endpoint="mock", seed=0)


@pytest.fixture
def mock_alternative() -> GeneratorProfile:
    return GeneratorProfile(name="alternative", endpoint="mock", seed=7)


@pytest.fixture
def mock_judge() -> GeneratorProfile:
    return GeneratorProfile(name="judge", endpoint="mock", seed=3, temperature=0.0)

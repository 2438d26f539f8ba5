"""Sample intent chains and exemplar questions from extracted knowledge.

The hidden-state process draws a turn count, an opening intent, and then
walks the transition matrix; each intent emits one exemplar question drawn
uniformly from the single-turn dataset. Sampling is inverse-CDF over the
stored leaf order with counter-based (Philox) generators, so corpora are
reproducible even when sessions are produced concurrently: every session
derives its own independent key from (base_seed, session_index).
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus_model import IntentPath, IntentTaxonomy, SingleTurnExample
from .knowledge_extraction import DomainKnowledge, TurnDistribution

NEG_INF = float("-inf")


class SamplingError(ValueError):
    pass


def derive_seed(base_seed: int, index: int) -> int:
    """Stable 128-bit per-session key from (base_seed, session_index)."""
    digest = hashlib.blake2b(f"{base_seed}:{index}".encode(), digest_size=16).digest()
    return int.from_bytes(digest, "big")


def rng_from_seed(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed % (1 << 128)))


def sample_index(rng: np.random.Generator, cdf: np.ndarray) -> int:
    """Inverse-CDF draw; cdf is the cumulative sum of a probability vector."""
    u = rng.random()
    return min(int(np.searchsorted(cdf, u, side="right")), len(cdf) - 1)


class ExemplarPool:
    """Single-turn examples indexed by leaf intent for uniform emission draws."""

    def __init__(self, examples: Sequence[SingleTurnExample]):
        self.examples = list(examples)
        self.by_leaf: dict[str, list[SingleTurnExample]] = {}
        self.path_by_leaf: dict[str, IntentPath] = {}
        for ex in self.examples:
            self.by_leaf.setdefault(ex.intent.leaf, []).append(ex)
            self.path_by_leaf.setdefault(ex.intent.leaf, ex.intent)

    def count(self, leaf_id: str) -> int:
        return len(self.by_leaf.get(leaf_id, ()))

    def sample(self, leaf_id: str, rng: np.random.Generator) -> SingleTurnExample:
        bucket = self.by_leaf.get(leaf_id)
        if not bucket:
            raise SamplingError(f"no exemplars available for intent {leaf_id!r}")
        return bucket[int(rng.integers(len(bucket)))]

    def sample_many(
        self, leaf_id: str, n: int, rng: np.random.Generator
    ) -> list[SingleTurnExample]:
        """Up to n exemplars; draws with replacement when the pool is smaller."""
        bucket = self.by_leaf.get(leaf_id)
        if not bucket:
            raise SamplingError(f"no exemplars available for intent {leaf_id!r}")
        if len(bucket) >= n:
            idx = rng.choice(len(bucket), size=n, replace=False)
        else:
            idx = rng.integers(len(bucket), size=n)
        return [bucket[int(i)] for i in idx]


@dataclass(frozen=True)
class IntentChain:
    """A sampled intent sequence I_1..I_T with one exemplar question per turn."""

    intents: tuple[IntentPath, ...]
    exemplars: tuple[SingleTurnExample, ...]
    seed: int

    def __post_init__(self):
        if not self.intents or len(self.intents) != len(self.exemplars):
            raise ValueError("chain needs equal, nonzero intent and exemplar counts")
        for intent, ex in zip(self.intents, self.exemplars):
            if ex.intent != intent:
                raise ValueError(f"exemplar intent {ex.intent} != chain intent {intent}")

    @property
    def n_turns(self) -> int:
        return len(self.intents)


class _Tables:
    """Precomputed CDFs for a DomainKnowledge instance."""

    def __init__(self, knowledge: DomainKnowledge):
        self.turn_values = knowledge.turn_dist.support()
        self.turn_cdf = np.cumsum([knowledge.turn_dist.probs[t] for t in self.turn_values])
        self.init_cdf = np.cumsum(knowledge.init.probs)
        self.trans_cdf = np.cumsum(knowledge.trans.rows, axis=1)


def _tables(knowledge: DomainKnowledge) -> _Tables:
    cached = getattr(knowledge, "_sampler_tables", None)
    if cached is None:
        cached = _Tables(knowledge)
        knowledge._sampler_tables = cached
    return cached


def _turn_count(turn_dist: TurnDistribution, rng: np.random.Generator) -> int:
    values = turn_dist.support()
    cdf = np.cumsum([turn_dist.probs[t] for t in values])
    return values[sample_index(rng, cdf)]


def _path_for_leaf(pool: ExemplarPool, leaf_id: str) -> IntentPath:
    path = pool.path_by_leaf.get(leaf_id)
    if path is None:
        raise SamplingError(f"no exemplars available for intent {leaf_id!r}")
    return path


def sample_chain(
    knowledge: DomainKnowledge,
    pool: ExemplarPool,
    rng: np.random.Generator,
    seed: int = 0,
) -> IntentChain:
    """Draw T, then I_1, then I_t | I_{t-1}; emit one uniform exemplar per intent."""
    tables = _tables(knowledge)
    t_total = tables.turn_values[sample_index(rng, tables.turn_cdf)]
    leaf_ids = []
    idx = sample_index(rng, tables.init_cdf)
    leaf_ids.append(knowledge.leaf_order[idx])
    for _ in range(1, t_total):
        idx = sample_index(rng, tables.trans_cdf[idx])
        leaf_ids.append(knowledge.leaf_order[idx])
    intents = tuple(_path_for_leaf(pool, leaf) for leaf in leaf_ids)
    exemplars = tuple(pool.sample(leaf, rng) for leaf in leaf_ids)
    return IntentChain(intents=intents, exemplars=exemplars, seed=seed)


def sample_random_chain(
    turn_dist: TurnDistribution,
    taxonomy: IntentTaxonomy,
    pool: ExemplarPool,
    rng: np.random.Generator,
    seed: int = 0,
) -> IntentChain:
    """Baseline sampler: keeps P(T) but picks every intent i.i.d. uniform."""
    t_total = _turn_count(turn_dist, rng)
    n = taxonomy.n_leaves()
    leaf_ids = [taxonomy.leaf_order[int(rng.integers(n))] for _ in range(t_total)]
    intents = tuple(taxonomy.path_for_leaf(leaf) for leaf in leaf_ids)
    exemplars = tuple(pool.sample(leaf, rng) for leaf in leaf_ids)
    return IntentChain(intents=intents, exemplars=exemplars, seed=seed)


def chain_log_prob_terms(
    chain: IntentChain, knowledge: DomainKnowledge, pool: ExemplarPool
) -> list[float]:
    """Per-turn log contributions: intent factor plus uniform-emission factor.

    Term t is log P(I_t | I_{t-1}) + log(1 / n(I_t)) (initial distribution at
    t=1). Zero-probability transitions contribute -inf, which can only occur
    for unsmoothed knowledge.
    """
    terms = []
    prev: str | None = None
    for intent in chain.intents:
        leaf = intent.leaf
        p_intent = (
            knowledge.init_prob(leaf) if prev is None else knowledge.trans_prob(prev, leaf)
        )
        n_emissions = pool.count(leaf)
        if n_emissions == 0:
            raise SamplingError(f"no exemplars available for intent {leaf!r}")
        if p_intent <= 0.0:
            terms.append(NEG_INF)
        else:
            terms.append(math.log(p_intent) - math.log(n_emissions))
        prev = leaf
    return terms


def chain_log_prob(
    chain: IntentChain, knowledge: DomainKnowledge, pool: ExemplarPool
) -> float:
    """log P(I_{1:T}, X_{1:T}) under the sampling model (-inf if impossible)."""
    return sum(chain_log_prob_terms(chain, knowledge, pool))

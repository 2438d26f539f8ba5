"""intentsim: intent-chain dialogue synthesis and multi-turn intent classification.

Pipeline: extract turn/intent statistics from chat logs, sample intent
chains, emit conversations (verbatim exemplars or a context-aware text
generator), judge and pair alternative answers, and train/evaluate a
hierarchical classifier with an optional ranking objective.
"""

__version__ = "0.1.0"

from . import (
    chain_sampler,
    cli,
    corpus_builder,
    corpus_model,
    emission,
    knowledge_extraction,
    mintcl,
    ranking_eval,
)

__all__ = [
    "chain_sampler",
    "cli",
    "corpus_builder",
    "corpus_model",
    "emission",
    "knowledge_extraction",
    "mintcl",
    "ranking_eval",
    "__version__",
]

"""Command-line pipeline: extract -> generate -> stats/rate -> train -> eval.

Every command reads an optional JSON config file (profiles, knowledge,
build, and train sections); explicit flags win over config values. Secrets
never live in the config: generator API keys come from the environment
variable named in each profile. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .chain_sampler import ExemplarPool, SamplingError
from .corpus_builder import (
    BuildConfig,
    BuildError,
    corpus_stats,
    expand_prefixes,
    make_ranking_negatives,
    read_samples,
    save_stats,
    write_samples,
    build_corpus,
)
from .corpus_model import (
    JsonlError,
    TaxonomyError,
    load_taxonomy,
    read_chat_logs,
    read_conversations,
    read_examples,
    write_conversations,
)
from .emission import GenerationError, GeneratorProfile, make_generator
from .knowledge_extraction import (
    DEFAULT_ALPHA,
    DEFAULT_MAX_TURNS,
    ExtractionError,
    extract_knowledge,
    load_knowledge,
    save_knowledge,
)
from .mintcl import (
    MODES,
    EvaluationError,
    MintClModel,
    TrainConfig,
    TrainingError,
    evaluate,
    render_metrics,
    save_metrics,
    train,
)
from .ranking_eval import RatingError, rate_corpus_quality, read_pairs, write_pairs


class UsageError(ValueError):
    pass


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise UsageError(f"config file {path} must contain a JSON object")
    return config


def _profile(config: dict, key: str, default_name: str) -> GeneratorProfile:
    profiles = config.get("profiles", {})
    if key in profiles:
        try:
            return GeneratorProfile.from_dict(profiles[key])
        except (TypeError, ValueError) as exc:
            raise UsageError(f"bad profile {key!r} in config: {exc}")
    return GeneratorProfile(name=default_name)


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {path}")
    return p


def _pick(flag_value, config_section: dict, key: str, fallback):
    """Flag > config > default."""
    if flag_value is not None:
        return flag_value
    return config_section.get(key, fallback)


def cmd_extract(args) -> int:
    config = _load_config(args.config)
    section = config.get("knowledge", {})
    alpha = _pick(args.alpha, section, "alpha", DEFAULT_ALPHA)
    max_turns = _pick(args.max_turns, section, "max_turns", DEFAULT_MAX_TURNS)
    taxonomy = load_taxonomy(_require_file(args.taxonomy, "taxonomy file"))
    logs, skipped = read_chat_logs(_require_file(args.logs, "chat log file"), strict=not args.lenient)
    knowledge = extract_knowledge(logs, taxonomy, alpha=alpha, max_turns=max_turns)
    save_knowledge(args.out, knowledge)
    turn_probs = ", ".join(
        f"T={t}: {p:.3f}" for t, p in sorted(knowledge.turn_dist.probs.items())
    )
    print(f"sessions read: {len(logs)} (skipped {skipped})")
    print(f"turn distribution: {turn_probs}")
    print(f"leaves: {len(knowledge.leaf_order)}, alpha: {knowledge.trans.alpha}")
    print(f"knowledge written to {args.out}")
    return 0


def cmd_generate(args) -> int:
    if args.n is not None and args.n < 1:
        raise UsageError("--n must be >= 1")
    config = _load_config(args.config)
    section = config.get("build", {})
    origin = _pick(args.origin, section, "origin", "chain_of_intent")
    build = BuildConfig(
        n_sessions=_pick(args.n, section, "n_sessions", 100),
        base_seed=_pick(args.seed, section, "seed", 0),
        origin=origin,
        language=_pick(args.language, section, "language", "en"),
        concurrency=_pick(args.concurrency, section, "concurrency", 8),
        max_failure_ratio=section.get("max_failure_ratio", 0.1),
        generator=_profile(config, "generator", "primary"),
        alternative=_profile(config, "alternative", "alternative") if args.pairs else None,
        judge=_profile(config, "judge", "judge") if args.pairs else None,
    )
    taxonomy = load_taxonomy(_require_file(args.taxonomy, "taxonomy file"))
    knowledge = load_knowledge(_require_file(args.knowledge, "knowledge file"))
    examples, _ = read_examples(_require_file(args.single_turn, "single-turn dataset"))
    pool = ExemplarPool(examples)

    result = build_corpus(knowledge, pool, build, taxonomy=taxonomy)
    out_dir = Path(args.out_dir)
    conv_path = out_dir / "conversations.jsonl"
    write_conversations(conv_path, result.conversations)
    print(f"sessions: {len(result.conversations)} ok, {result.n_failed} failed "
          f"(requested {result.n_requested})")
    print(f"conversations written to {conv_path}")
    if result.pairs:
        pairs_path = out_dir / "pairs.jsonl"
        write_pairs(pairs_path, result.pairs)
        print(f"ranked pairs written to {pairs_path}")
    if args.samples:
        samples = [s for conv in result.conversations for s in expand_prefixes(conv)]
        samples_path = out_dir / "samples.jsonl"
        write_samples(samples_path, samples)
        print(f"classification samples written to {samples_path}")
    return 0


def cmd_stats(args) -> int:
    conversations, _ = read_conversations(_require_file(args.corpus, "corpus file"))
    report = corpus_stats(conversations)
    print(report.render_table())
    if args.out:
        save_stats(args.out, report)
        print(f"stats written to {args.out}")
    return 0


def cmd_rate(args) -> int:
    config = _load_config(args.config)
    judge = make_generator(_profile(config, "judge", "judge"))
    conversations, _ = read_conversations(_require_file(args.corpus, "corpus file"))
    report = rate_corpus_quality(judge, conversations)
    print(report.render_table())
    if args.out:
        payload = {
            "mean": report.mean,
            "per_origin": report.per_origin,
            "scores": list(report.scores),
        }
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        print(f"quality report written to {args.out}")
    return 0


def cmd_train(args) -> int:
    if args.mode not in MODES:
        raise UsageError(f"unknown mode {args.mode!r}; choose from {', '.join(MODES)}")
    config = _load_config(args.config)
    section = config.get("train", {})
    train_config = TrainConfig(
        mode=args.mode,
        d=_pick(args.d, section, "d", 4096),
        lam=_pick(args.lam, section, "lam", 0.3),
        lr=_pick(args.lr, section, "lr", 0.1),
        epochs=_pick(args.epochs, section, "epochs", 3),
        batch_size=_pick(args.batch_size, section, "batch_size", 32),
        beam_width=_pick(args.beam_width, section, "beam_width", 4),
        seed=_pick(args.seed, section, "seed", 0),
        dtype=_pick(args.dtype, section, "dtype", "float64"),
    )
    taxonomy = load_taxonomy(_require_file(args.taxonomy, "taxonomy file"))
    single_turn, _ = read_examples(_require_file(args.single_turn, "single-turn dataset"))

    multi_samples = []
    if train_config.uses_multi:
        if not args.samples:
            raise UsageError(f"mode {args.mode} needs --samples (classification samples JSONL)")
        multi_samples, _ = read_samples(_require_file(args.samples, "classification samples"))

    pairs = []
    binary_items = []
    if train_config.ranking_kind is not None:
        if not args.pairs:
            raise UsageError(f"mode {args.mode} needs --pairs (ranked pairs JSONL)")
        pairs, _ = read_pairs(_require_file(args.pairs, "ranked pairs"))
        if train_config.ranking_kind == "binary":
            if not args.corpus:
                raise UsageError(f"mode {args.mode} needs --corpus to draw negative answers")
            corpus, _ = read_conversations(_require_file(args.corpus, "corpus file"))
            rng = np.random.Generator(np.random.Philox(key=train_config.seed))
            binary_items = make_ranking_negatives(corpus, pairs, rng)

    model, history = train(
        taxonomy,
        single_turn,
        train_config,
        multi_samples=multi_samples,
        pairs=pairs,
        binary_items=binary_items,
    )
    for row in history:
        print(
            f"epoch {row['epoch']}: intent {row['intent_loss']:.4f} "
            f"ranking {row['ranking_loss']:.4f} total {row['total_loss']:.4f}"
        )
    model.save(args.out)
    print(f"model written to {args.out}")
    return 0


def cmd_eval(args) -> int:
    model = MintClModel.load(_require_file(args.model, "model file"))
    conversations, _ = read_conversations(_require_file(args.test, "test corpus"))
    metrics = evaluate(
        model, conversations, beam_width=args.beam_width, setting=args.setting
    )
    print(render_metrics(metrics))
    if args.out:
        save_metrics(args.out, metrics)
        print(f"metrics written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="intentsim",
        description="Synthesize intent-aware dialogues and train a multi-turn intent classifier.",
    )
    parser.add_argument("--version", action="version", version=f"intentsim {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="estimate turn/intent statistics from chat logs")
    p.add_argument("--logs", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--max-turns", dest="max_turns", type=int, default=None)
    p.add_argument("--lenient", action="store_true", help="skip malformed log lines")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("generate", help="sample chains and emit a conversation corpus")
    p.add_argument("--knowledge", required=True)
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--single-turn", dest="single_turn", required=True)
    p.add_argument("--out-dir", dest="out_dir", required=True)
    p.add_argument("--origin", choices=["random", "hmm", "chain_of_intent"], default=None)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--language", default=None)
    p.add_argument("--concurrency", type=int, default=None)
    p.add_argument("--pairs", action="store_true", help="also judge and emit ranked answer pairs")
    p.add_argument("--samples", action="store_true", help="also emit prefix-expanded samples")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("stats", help="corpus statistics table")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("rate", help="judge whole-session quality per origin")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_rate)

    p = sub.add_parser("train", help="train the hierarchical intent classifier")
    p.add_argument("--taxonomy", required=True)
    p.add_argument("--single-turn", dest="single_turn", required=True)
    p.add_argument("--samples", default=None, help="classification samples JSONL (MT modes)")
    p.add_argument("--pairs", default=None, help="ranked pairs JSONL (+RR/+CR modes)")
    p.add_argument("--corpus", default=None, help="conversations JSONL (negatives for +RR)")
    p.add_argument("--mode", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--d", type=int, default=None)
    p.add_argument("--lam", type=float, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
    p.add_argument("--beam-width", dest="beam_width", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dtype", default=None)
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on held-out conversations")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--setting", default=None)
    p.add_argument("--beam-width", dest="beam_width", type=int, default=4)
    p.set_defaults(func=cmd_eval)
    return parser


USAGE_ERRORS = (UsageError, TaxonomyError, ExtractionError, FileNotFoundError)
RUNTIME_ERRORS = (
    BuildError,
    GenerationError,
    RatingError,
    TrainingError,
    EvaluationError,
    SamplingError,
    JsonlError,
)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RUNTIME_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

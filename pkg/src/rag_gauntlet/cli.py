"""Command line interface: stats, pool, perturb, eval, and report re-rendering."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Mapping, Sequence

from . import conflictgen, corpus, genadv, scenarios
from .genadv import PipelineConfig
from .harness import (
    ConfigError,
    MockBehavior,
    MockChatBackend,
    MockModel,
    RunConfig,
    build_manifest,
    default_out_dir,
    emit_report,
    report_to_markdown,
)
from .scenarios import (
    Attack,
    BaselineReport,
    ConflictPartition,
    ParReport,
    PromptKind,
    run_generation,
)
from .services import (
    ChatClient,
    EmbeddingClient,
    HttpChatBackend,
    HttpEmbeddingBackend,
    HttpNerBackend,
    ChatNerBackend,
    NerClient,
    ResponseCache,
    Services,
)

logger = logging.getLogger(__name__)

_EVAL_PROMPTS = {
    "unans": PromptKind.UNANS,
    "rad": PromptKind.NORMAL,
    "adv-unans": PromptKind.UNANS,
    "conflict": PromptKind.CONFLICT,
    "stubborn": PromptKind.NORMAL,
    "par": PromptKind.NORMAL,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rag-gauntlet",
        description="Robustness evaluation harness for retrieval-augmented QA.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--dataset", help="retrieval-results JSONL file")
    common.add_argument("--k", type=int, help="documents per example (default 5)")
    common.add_argument("--model", help="chat model id")
    common.add_argument("--api-base", help="chat completions base URL")
    common.add_argument("--embed-api-base", help="embeddings base URL (defaults to --api-base)")
    common.add_argument("--embed-model", help="embedding model id")
    common.add_argument("--ner-url", help="external NER service base URL")
    common.add_argument("--prompt", choices=["normal", "unans", "conflict", "closed"])
    common.add_argument("--attack", choices=["genadv", "conflict", "random", "topk"])
    common.add_argument("--seed", type=int, help="global seed (default 1)")
    common.add_argument("--concurrency", type=int, help="in-flight request limit (default 4)")
    common.add_argument("--cache-dir", help="response cache directory (default ./cache)")
    common.add_argument("--attempts", type=int, help="regeneration budget per step (default 3)")
    common.add_argument("--error-ceiling", type=float, help="tolerated failure fraction (default 0.01)")
    common.add_argument("--max-tokens", type=int, help="max tokens for evaluation answers (default 100)")
    common.add_argument("--out", help="output directory (default runs/<timestamp>-<digest>)")
    common.add_argument("--mock", help="offline model: oracle | parrot | scripted:PATH")
    common.add_argument("--api-key-env", help="env var holding the API key")

    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("stats", parents=[common], help="dataset statistics")

    pool = sub.add_parser("pool", parents=[common], help="build an entity pool")
    pool.add_argument("--corpus", required=True, help="text file, one block per line")
    pool.add_argument("--max-per-type", type=int, default=50_000)

    perturb = sub.add_parser("perturb", parents=[common], help="emit a perturbed dataset")
    perturb.add_argument("kind", choices=["genadv", "conflict", "random", "topk"])
    perturb.add_argument("--entity-pool", help="entity pool file (conflict only)")

    ev = sub.add_parser("eval", parents=[common], help="run and score an experiment")
    ev.add_argument(
        "kind",
        choices=["unans", "rad", "adv-unans", "conflict", "stubborn", "baseline", "par"],
    )
    ev.add_argument("--perturbed", help="perturbed dataset JSONL (rad, adv-unans, conflict, stubborn)")
    ev.add_argument("--artifacts", help="artifact sidecar JSONL (conflict, stubborn)")

    report = sub.add_parser("report", parents=[common], help="re-render reports from raw records")
    report.add_argument("--run-dir", required=True)

    return parser


_CONFIG_KEYS = {
    "dataset", "k", "model", "api_base", "embed_api_base", "embed_model", "ner_url",
    "prompt", "attack", "seed", "concurrency", "cache_dir", "attempts", "error_ceiling",
    "max_tokens", "out", "mock", "api_key_env", "perturbed", "artifacts", "entity_pool",
}


def load_config(args: argparse.Namespace) -> RunConfig:
    """Assemble RunConfig: defaults, then config-file values, then flags."""
    values: dict[str, Any] = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path, encoding="utf-8") as fh:
                file_values = json.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file not found: {config_path}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_values, dict):
            raise ConfigError("config file must hold a JSON object")
        for key, value in file_values.items():
            key = key.replace("-", "_")
            if key not in _CONFIG_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = value
    for key in _CONFIG_KEYS:
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            values[key] = flag_value
    return RunConfig(**values)


def _read_api_key(config: RunConfig) -> str | None:
    return os.environ.get(config.api_key_env)


def build_chat_client(
    config: RunConfig, examples: Sequence[corpus.QAExample]
) -> tuple[ChatClient, str]:
    """Chat client plus the model id recorded in records and manifests."""
    cache = ResponseCache(config.cache_dir)
    if config.mock:
        kind, _, payload = config.mock.partition(":")
        try:
            behavior = MockBehavior(kind)
        except ValueError as exc:
            raise ConfigError(f"unknown mock behavior {kind!r}") from exc
        model = MockModel(behavior=behavior)
        if behavior is MockBehavior.ORACLE:
            model.answers_by_question = {ex.question: list(ex.answers) for ex in examples}
        elif behavior is MockBehavior.SCRIPTED:
            if not payload:
                raise ConfigError("scripted mock needs a fixture: --mock scripted:PATH")
            try:
                with open(payload, encoding="utf-8") as fh:
                    script = json.load(fh)
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read scripted fixture {payload}: {exc}") from exc
            model.script_by_question = {
                ex.question: script[ex.id] for ex in examples if ex.id in script
            }
        backend = MockChatBackend(model)
        return ChatClient(backend, cache=cache), config.model or f"mock-{behavior.value}"
    if not config.api_base:
        raise ConfigError("--api-base is required without --mock")
    if not config.model:
        raise ConfigError("--model is required without --mock")
    backend = HttpChatBackend(config.api_base, api_key=_read_api_key(config))
    return ChatClient(backend, cache=cache), config.model


def build_services(config: RunConfig, examples: Sequence[corpus.QAExample]) -> Services:
    """Full bundle (chat + embeddings + NER) for the synthesis pipelines."""
    chat, model_id = build_chat_client(config, examples)
    if not config.embed_model:
        raise ConfigError("--embed-model is required for synthesis pipelines")
    embed_base = config.embed_api_base or config.api_base
    if not embed_base:
        raise ConfigError("--embed-api-base (or --api-base) is required for synthesis pipelines")
    cache = ResponseCache(config.cache_dir)
    embedder = EmbeddingClient(
        HttpEmbeddingBackend(embed_base, api_key=_read_api_key(config)), cache=cache
    )
    if config.ner_url:
        ner = NerClient(HttpNerBackend(config.ner_url), cache=cache)
    else:
        ner = NerClient(ChatNerBackend(chat, model_id), cache=cache)
    return Services(
        chat=chat, chat_model=model_id, embedder=embedder, embed_model=config.embed_model, ner=ner
    )


def _resolve_out(config: RunConfig, manifest: Mapping[str, Any]) -> Path:
    out = Path(config.out) if config.out else default_out_dir(manifest)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out: Path, manifest: Mapping[str, Any]) -> None:
    out.joinpath("manifest.json").write_text(
        json.dumps(manifest, indent=2, ensure_ascii=False, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _check_prompt_override(config: RunConfig, kind: str) -> None:
    expected = _EVAL_PROMPTS.get(kind)
    if config.prompt and expected and config.prompt != expected.value:
        raise ConfigError(
            f"eval {kind} runs under the {expected.value!r} prompt; got --prompt {config.prompt!r}"
        )


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_stats(config: RunConfig) -> int:
    config.validate()
    examples = corpus.load_dataset(config.dataset, config.k)
    labels = [corpus.label_answerability(ex) for ex in examples]
    stats = corpus.dataset_stats(examples, labels)
    print(report_to_markdown(stats))
    print(json.dumps(
        {"size": stats.size, "recall_at_k": stats.recall_at_k, "unans_fraction": stats.unans_fraction},
        indent=2,
    ))
    if config.out:
        emit_report(stats, config.out)
    return 0


def cmd_pool(config: RunConfig, corpus_path: str, max_per_type: int) -> int:
    config.validate(require_dataset=False)
    if not Path(corpus_path).exists():
        raise ConfigError(f"corpus not found: {corpus_path}")
    services = build_services(config, [])
    with open(corpus_path, encoding="utf-8") as fh:
        blocks = [line.strip() for line in fh if line.strip()]
    pool = conflictgen.build_entity_pool(blocks, services, max_entities_per_type=max_per_type)
    out = Path(config.out) if config.out else Path(".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "entity_pool.jsonl"
    conflictgen.save_entity_pool(pool, path)
    print(f"entity pool: {sum(len(v) for v in pool.entries.values())} entries, "
          f"{len(pool.entries)} types -> {path}")
    return 0


def _perturb_outputs(config: RunConfig, kind: str) -> tuple[Path, dict[str, Any]]:
    manifest = build_manifest(config, subcommand=f"perturb:{kind}", attack=kind)
    out = _resolve_out(config, manifest)
    _write_manifest(out, manifest)
    return out, manifest


def cmd_perturb(config: RunConfig, kind: str) -> int:
    config.validate()
    examples = corpus.load_dataset(config.dataset, config.k)
    out, _ = _perturb_outputs(config, kind)
    pipeline_config = PipelineConfig(attempts=config.attempts)

    if kind == "random":
        perturbed = [
            corpus.insert_document(
                ex, corpus.pick_random_document(examples, ex.id, config.seed), config.seed
            )
            for ex in examples
        ]
        corpus.write_dataset(perturbed, out / "perturbed.jsonl")
        print(f"perturbed {len(perturbed)}/{len(examples)} examples -> {out / 'perturbed.jsonl'}")
        return 0

    if kind == "topk":
        perturbed = []
        skipped: list[str] = []
        for ex in examples:
            doc = corpus.pick_rank_k_plus_one(
                list(ex.documents) + list(ex.reserve_documents), config.k
            )
            if doc is None:
                skipped.append(ex.id)
                continue
            perturbed.append(corpus.insert_document(ex, doc, config.seed))
        corpus.write_dataset(perturbed, out / "perturbed.jsonl")
        out.joinpath("skipped.json").write_text(
            json.dumps({"skipped_ids": skipped}, indent=2) + "\n", encoding="utf-8"
        )
        print(
            f"perturbed {len(perturbed)}/{len(examples)} examples "
            f"({len(skipped)} lacked a rank-{config.k + 1} context) -> {out / 'perturbed.jsonl'}"
        )
        return 0

    if kind == "genadv":
        services = build_services(config, examples)
        result = genadv.run_genadv_batch(
            examples, services, pipeline_config, concurrency=config.concurrency
        )
        artifacts_by_id = {a.example_id: a for a in result.artifacts}
        perturbed = [
            corpus.insert_document(
                ex, genadv.adversarial_document(artifacts_by_id[ex.id]), config.seed
            )
            for ex in examples
            if ex.id in artifacts_by_id
        ]
        corpus.write_dataset(perturbed, out / "perturbed.jsonl")
        genadv.write_adversarial_sidecar(out / "artifacts.jsonl", result.artifacts, result.skips)
        print(
            f"perturbed {len(perturbed)}/{len(examples)} examples, "
            f"skips by reason: {result.skip_counts()} -> {out}"
        )
        return 0

    # conflict
    if not config.entity_pool:
        raise ConfigError("perturb conflict requires --entity-pool")
    pool = conflictgen.load_entity_pool(config.entity_pool)
    services = build_services(config, examples)
    answerable = [ex for ex in examples if corpus.label_answerability(ex).answerable]
    result = conflictgen.run_conflictgen_batch(
        answerable, pool, services, pipeline_config, concurrency=config.concurrency
    )
    artifacts_by_id = {a.example_id: a for a in result.artifacts}
    perturbed = [
        corpus.insert_document(
            ex, conflictgen.conflict_document(artifacts_by_id[ex.id]), config.seed
        )
        for ex in answerable
        if ex.id in artifacts_by_id
    ]
    corpus.write_dataset(perturbed, out / "perturbed.jsonl")
    conflictgen.write_conflict_sidecar(out / "artifacts.jsonl", result.artifacts, result.skips)
    print(
        f"crafted conflicts for {len(perturbed)}/{len(answerable)} answerable examples "
        f"({len(examples) - len(answerable)} unanswerable excluded), "
        f"skips by reason: {result.skip_counts()} -> {out}"
    )
    return 0


def _gold(examples: Sequence[corpus.QAExample]) -> dict[str, list[str]]:
    return {ex.id: list(ex.answers) for ex in examples}


def _labels(examples: Sequence[corpus.QAExample]) -> dict[str, bool]:
    return {ex.id: corpus.label_answerability(ex).answerable for ex in examples}


def _load_perturbed(config: RunConfig) -> list[corpus.QAExample]:
    if not config.perturbed:
        raise ConfigError("this eval requires --perturbed")
    if not Path(config.perturbed).exists():
        raise ConfigError(f"perturbed dataset not found: {config.perturbed}")
    return corpus.load_perturbed_dataset(config.perturbed)


def cmd_eval(config: RunConfig, kind: str) -> int:
    config.validate()
    _check_prompt_override(config, kind)
    examples = corpus.load_dataset(config.dataset, config.k)
    examples_by_id = {ex.id: ex for ex in examples}

    extras: dict[str, Any] = {}
    if config.perturbed:
        extras["perturbed"] = config.perturbed
    if config.artifacts:
        extras["artifacts"] = config.artifacts
    prompt_kind = _EVAL_PROMPTS.get(kind)
    manifest = build_manifest(
        config,
        subcommand=f"eval:{kind}",
        prompt_kind=prompt_kind.value if prompt_kind else None,
        attack=config.attack,
        extras=extras,
    )
    out = _resolve_out(config, manifest)
    _write_manifest(out, manifest)

    run_kwargs = dict(
        concurrency=config.concurrency,
        error_ceiling=config.error_ceiling,
        max_tokens=config.max_tokens,
    )

    if kind == "unans":
        client, model_id = build_chat_client(config, examples)
        records = run_generation(examples, client, model_id, PromptKind.UNANS, **run_kwargs)
        scenarios.write_records(records, out / "records.jsonl")
        report = scenarios.eval_unanswerable(records, _labels(examples), _gold(examples))

    elif kind in ("rad", "adv-unans"):
        if not config.attack:
            raise ConfigError(f"eval {kind} requires --attack")
        attack = Attack(config.attack)
        perturbed = _load_perturbed(config)
        missing = [ex.id for ex in perturbed if ex.id not in examples_by_id]
        if missing:
            raise ConfigError(f"perturbed examples missing from base dataset: {missing[:5]}")
        base_subset = [examples_by_id[ex.id] for ex in perturbed]
        client, model_id = build_chat_client(config, examples + perturbed)
        prompt = PromptKind.NORMAL if kind == "rad" else PromptKind.UNANS
        base_records = run_generation(base_subset, client, model_id, prompt, **run_kwargs)
        pert_records = run_generation(perturbed, client, model_id, prompt, **run_kwargs)
        scenarios.write_records(base_records, out / "records_base.jsonl")
        scenarios.write_records(pert_records, out / "records_perturbed.jsonl")
        if kind == "rad":
            report = scenarios.eval_rad(base_records, pert_records, _gold(base_subset), attack)
        else:
            labels = _labels(base_subset)
            relabeled = {
                ex.id: (list(ex.answers) if labels[ex.id] else ["unanswerable"])
                for ex in base_subset
            }
            report = scenarios.eval_adv_unans(base_records, pert_records, labels, relabeled, attack)

    elif kind == "conflict":
        perturbed = _load_perturbed(config)
        if not config.artifacts:
            raise ConfigError("eval conflict requires --artifacts")
        _, skips = conflictgen.read_conflict_sidecar(config.artifacts)
        conflicting = frozenset(ex.id for ex in perturbed)
        nonconflicting = frozenset(skip.example_id for skip in skips)
        partition = ConflictPartition(conflicting=conflicting, nonconflicting=nonconflicting)
        nc_examples = [examples_by_id[eid] for eid in sorted(nonconflicting)]
        combined = sorted(list(perturbed) + nc_examples, key=lambda ex: ex.id)
        client, model_id = build_chat_client(config, examples + perturbed)
        records = run_generation(combined, client, model_id, PromptKind.CONFLICT, **run_kwargs)
        scenarios.write_records(records, out / "records.jsonl")
        report = scenarios.eval_conflict_detection(records, partition, _gold(examples))

    elif kind == "stubborn":
        perturbed = _load_perturbed(config)
        if not config.artifacts:
            raise ConfigError("eval stubborn requires --artifacts")
        artifacts, _ = conflictgen.read_conflict_sidecar(config.artifacts)
        base_subset = [examples_by_id[ex.id] for ex in perturbed if ex.id in examples_by_id]
        client, model_id = build_chat_client(config, examples + perturbed)
        base_records = run_generation(base_subset, client, model_id, PromptKind.NORMAL, **run_kwargs)
        pert_records = run_generation(perturbed, client, model_id, PromptKind.NORMAL, **run_kwargs)
        scenarios.write_records(base_records, out / "records_base.jsonl")
        scenarios.write_records(pert_records, out / "records_perturbed.jsonl")
        ara = scenarios.compute_ara(base_records, _gold(base_subset))
        report = scenarios.eval_stubbornness(ara, pert_records, _gold(base_subset), artifacts)

    elif kind == "baseline":
        client, model_id = build_chat_client(config, examples)
        closed_records = run_generation(
            examples, client, model_id, PromptKind.CLOSED_BOOK, **run_kwargs
        )
        retrieval_records = run_generation(
            examples, client, model_id, PromptKind.NORMAL, **run_kwargs
        )
        scenarios.write_records(closed_records, out / "records_closed.jsonl")
        scenarios.write_records(retrieval_records, out / "records_retrieval.jsonl")
        gold = _gold(examples)
        labels = _labels(examples)
        par = None
        if any(not answerable for answerable in labels.values()):
            par = scenarios.compute_par(retrieval_records, labels, gold)
        report = BaselineReport(
            closed_book=scenarios.eval_baseline(closed_records, gold),
            retrieval=scenarios.eval_baseline(retrieval_records, gold),
            par=par,
        )

    elif kind == "par":
        client, model_id = build_chat_client(config, examples)
        records = run_generation(examples, client, model_id, PromptKind.NORMAL, **run_kwargs)
        scenarios.write_records(records, out / "records.jsonl")
        labels = _labels(examples)
        par = scenarios.compute_par(records, labels, _gold(examples))
        report = ParReport(
            par=par,
            unanswerable_count=sum(1 for answerable in labels.values() if not answerable),
            correct_ids=sorted(
                r.example_id
                for r in records
                if not labels[r.example_id]
                and scenarios.is_correct(r.response, examples_by_id[r.example_id].answers)
            ),
        )

    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown eval kind {kind!r}")

    report.manifest = dict(manifest)
    emit_report(report, out)
    print(report_to_markdown(report))
    print(f"report written to {out}")
    return 0


def cmd_report(config: RunConfig, run_dir: str) -> int:
    run = Path(run_dir)
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise ConfigError(f"no manifest.json under {run_dir}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    subcommand = manifest.get("subcommand", "")
    if not subcommand.startswith("eval:"):
        raise ConfigError(f"run dir was not produced by an eval command: {subcommand!r}")
    kind = subcommand.split(":", 1)[1]
    examples = corpus.load_dataset(manifest["dataset"], manifest["k"])
    examples_by_id = {ex.id: ex for ex in examples}
    gold = _gold(examples)

    if kind == "unans":
        records = scenarios.read_records(run / "records.jsonl")
        report = scenarios.eval_unanswerable(records, _labels(examples), gold)
    elif kind in ("rad", "adv-unans"):
        attack = Attack(manifest["attack"])
        base_records = scenarios.read_records(run / "records_base.jsonl")
        pert_records = scenarios.read_records(run / "records_perturbed.jsonl")
        base_subset = [examples_by_id[r.example_id] for r in base_records]
        if kind == "rad":
            report = scenarios.eval_rad(base_records, pert_records, _gold(base_subset), attack)
        else:
            labels = _labels(base_subset)
            relabeled = {
                ex.id: (list(ex.answers) if labels[ex.id] else ["unanswerable"])
                for ex in base_subset
            }
            report = scenarios.eval_adv_unans(base_records, pert_records, labels, relabeled, attack)
    elif kind == "conflict":
        records = scenarios.read_records(run / "records.jsonl")
        perturbed = corpus.load_perturbed_dataset(manifest["perturbed"])
        _, skips = conflictgen.read_conflict_sidecar(manifest["artifacts"])
        partition = ConflictPartition(
            conflicting=frozenset(ex.id for ex in perturbed),
            nonconflicting=frozenset(skip.example_id for skip in skips),
        )
        report = scenarios.eval_conflict_detection(records, partition, gold)
    elif kind == "stubborn":
        artifacts, _ = conflictgen.read_conflict_sidecar(manifest["artifacts"])
        base_records = scenarios.read_records(run / "records_base.jsonl")
        pert_records = scenarios.read_records(run / "records_perturbed.jsonl")
        base_gold = {r.example_id: gold[r.example_id] for r in base_records}
        ara = scenarios.compute_ara(base_records, base_gold)
        report = scenarios.eval_stubbornness(ara, pert_records, base_gold, artifacts)
    elif kind == "baseline":
        closed_records = scenarios.read_records(run / "records_closed.jsonl")
        retrieval_records = scenarios.read_records(run / "records_retrieval.jsonl")
        labels = _labels(examples)
        par = None
        if any(not answerable for answerable in labels.values()):
            par = scenarios.compute_par(retrieval_records, labels, gold)
        report = BaselineReport(
            closed_book=scenarios.eval_baseline(closed_records, gold),
            retrieval=scenarios.eval_baseline(retrieval_records, gold),
            par=par,
        )
    elif kind == "par":
        records = scenarios.read_records(run / "records.jsonl")
        labels = _labels(examples)
        report = ParReport(
            par=scenarios.compute_par(records, labels, gold),
            unanswerable_count=sum(1 for answerable in labels.values() if not answerable),
            correct_ids=sorted(
                r.example_id
                for r in records
                if not labels[r.example_id] and scenarios.is_correct(r.response, gold[r.example_id])
            ),
        )
    else:
        raise ConfigError(f"cannot re-render reports for eval kind {kind!r}")

    report.manifest = manifest
    emit_report(report, run)
    print(report_to_markdown(report))
    return 0


def cli_dispatch(argv: Sequence[str]) -> int:
    """Parse and run; exit code 0 on success, 1 on run error, 2 on config error."""
    parser = build_parser()
    args = parser.parse_args(list(argv))
    config = load_config(args)
    if args.command == "stats":
        return cmd_stats(config)
    if args.command == "pool":
        return cmd_pool(config, args.corpus, args.max_per_type)
    if args.command == "perturb":
        return cmd_perturb(config, args.kind)
    if args.command == "eval":
        return cmd_eval(config, args.kind)
    if args.command == "report":
        return cmd_report(config, args.run_dir)
    raise ConfigError(f"unknown command {args.command!r}")  # pragma: no cover


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return cli_dispatch(sys.argv[1:] if argv is None else argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # run-level failure
        logger.error("run failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())

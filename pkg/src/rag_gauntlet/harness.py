"""Run configuration, deterministic mock chat models, and report emission."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import re
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .scenarios import (
    AdvUnansReport,
    BaselineReport,
    ConflictReport,
    ParReport,
    RadReport,
    StubbornReport,
    UnansReport,
)
from .services import ChatRequest, ProviderError
from .corpus import DatasetStats
from .textmetrics import UnansOutcome, normalize

DEFAULT_API_KEY_ENV = "RAG_GAUNTLET_API_KEY"


class ConfigError(ValueError):
    """Invalid flag, config-file value, or missing required setting."""


@dataclass
class RunConfig:
    """Everything a run needs; flags override config-file values."""

    dataset: str | None = None
    k: int = 5
    model: str | None = None
    api_base: str | None = None
    embed_api_base: str | None = None
    embed_model: str | None = None
    ner_url: str | None = None
    prompt: str | None = None
    attack: str | None = None
    seed: int = 1
    concurrency: int = 4
    cache_dir: str = "cache"
    attempts: int = 3
    error_ceiling: float = 0.01
    out: str | None = None
    mock: str | None = None
    api_key_env: str = DEFAULT_API_KEY_ENV
    perturbed: str | None = None
    artifacts: str | None = None
    entity_pool: str | None = None
    max_tokens: int = 100

    def validate(self, require_dataset: bool = True) -> None:
        if require_dataset:
            if not self.dataset:
                raise ConfigError("--dataset is required")
            if not Path(self.dataset).exists():
                raise ConfigError(f"dataset not found: {self.dataset}")
        if self.k <= 0:
            raise ConfigError("--k must be positive")
        if self.seed <= 0:
            raise ConfigError("--seed must be positive")
        if self.concurrency <= 0:
            raise ConfigError("--concurrency must be positive")
        if self.attempts <= 0:
            raise ConfigError("--attempts must be positive")
        if not 0.0 <= self.error_ceiling <= 1.0:
            raise ConfigError("--error-ceiling must be in [0, 1]")

    def snapshot(self) -> dict[str, Any]:
        """Semantic run parameters only. Scratch locations and the concurrency
        level are excluded so reruns stay byte-identical."""
        return {
            "k": self.k,
            "seed": self.seed,
            "attempts": self.attempts,
            "error_ceiling": self.error_ceiling,
            "model": self.model,
            "mock": self.mock,
            "api_base": self.api_base,
            "embed_api_base": self.embed_api_base,
            "embed_model": self.embed_model,
            "ner_url": self.ner_url,
            "max_tokens": self.max_tokens,
        }


def file_digest(path: str | Path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def build_manifest(
    config: RunConfig,
    *,
    subcommand: str,
    prompt_kind: str | None = None,
    attack: str | None = None,
    extras: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Provenance block embedded in every report. Deliberately timestamp-free."""
    manifest: dict[str, Any] = {
        "subcommand": subcommand,
        "dataset": config.dataset,
        "dataset_digest": file_digest(config.dataset) if config.dataset else None,
        "model_id": effective_model_id(config),
        "prompt_kind": prompt_kind,
        "attack": attack,
        "seed": config.seed,
        "k": config.k,
        "config": config.snapshot(),
    }
    if extras:
        manifest.update(extras)
    return manifest


def manifest_digest(manifest: Mapping[str, Any]) -> str:
    canonical = json.dumps(manifest, sort_keys=True, separators=(",", ":"), ensure_ascii=True)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:8]


def default_out_dir(manifest: Mapping[str, Any]) -> Path:
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    return Path("runs") / f"{stamp}-{manifest_digest(manifest)}"


def effective_model_id(config: RunConfig) -> str:
    if config.model:
        return config.model
    if config.mock:
        kind = config.mock.split(":", 1)[0]
        return f"mock-{kind}"
    return "unknown"


# ---------------------------------------------------------------------------
# Mock chat models
# ---------------------------------------------------------------------------


class MockBehavior(Enum):
    ORACLE = "oracle"
    PARROT = "parrot"
    SCRIPTED = "scripted"


@dataclass
class MockModel:
    """Deterministic stand-in for a chat model, driven by the rendered prompt.

    Oracle answers from the first answer-bearing document (gold supplied out of
    band, keyed by question); Parrot echoes the first capitalized multiword
    span of document 1; Scripted replays a fixture keyed by question.
    """

    behavior: MockBehavior
    answers_by_question: dict[str, list[str]] = field(default_factory=dict)
    script_by_question: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ParsedPrompt:
    question: str
    documents: tuple[tuple[str, str], ...]  # (title, text)


_DOC_SPLIT_RE = re.compile(r"(?:^|\n)Document \d+ \(Title: ", re.DOTALL)
_PARROT_RE = re.compile(r"\b[A-Z][A-Za-z]*(?:\s+[A-Z][A-Za-z]*)+\b")


def parse_prompt(rendered_prompt: str) -> ParsedPrompt:
    """Recover the question and document blocks from a rendered prompt."""
    if rendered_prompt.startswith("Answer the following question."):
        match = re.search(r"Q: (.*) A:$", rendered_prompt, re.DOTALL)
        if match is None:
            raise ValueError("closed-book prompt has no question")
        return ParsedPrompt(question=match.group(1), documents=())
    match = re.search(r"\nQuestion: (.*)\nAnswer:$", rendered_prompt, re.DOTALL)
    if match is None:
        raise ValueError("prompt has no question line")
    question = match.group(1)
    instruction_at = rendered_prompt.find("\nUse the above documents")
    docs_section = rendered_prompt[len("Documents:") : instruction_at]
    documents = []
    for block in _DOC_SPLIT_RE.split(docs_section):
        if not block:
            continue
        title, _, text = block.partition("): ")
        documents.append((title, text))
    return ParsedPrompt(question=question, documents=tuple(documents))


def mock_chat(model: MockModel, rendered_prompt: str) -> str:
    """Pure function of (mock model, rendered prompt)."""
    parsed = parse_prompt(rendered_prompt)
    if model.behavior is MockBehavior.ORACLE:
        if parsed.question not in model.answers_by_question:
            raise ProviderError(f"oracle mock has no gold for question {parsed.question!r}")
        answers = model.answers_by_question[parsed.question]
        for title, text in parsed.documents:
            blob = normalize(text + " " + title)
            for answer in answers:
                if normalize(answer) in blob:
                    return answer
        return "unanswerable"
    if model.behavior is MockBehavior.PARROT:
        if not parsed.documents:
            return "unknown"
        _, text = parsed.documents[0]
        match = _PARROT_RE.search(text)
        if match:
            return match.group(0)
        tokens = text.split()
        return tokens[0] if tokens else "unknown"
    if parsed.question not in model.script_by_question:
        raise ProviderError(f"scripted mock has no response for question {parsed.question!r}")
    return model.script_by_question[parsed.question]


class MockChatBackend:
    """ChatBackend adapter over a MockModel; errors are non-retryable."""

    def __init__(self, model: MockModel):
        self.model = model

    def complete(self, request: ChatRequest) -> str:
        prompt = request.messages[-1][1]
        return mock_chat(self.model, prompt)


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------


def _fmt(value: float | None) -> str:
    return "-" if value is None else f"{value:.2f}"


def _fmt_pct(value: float | None) -> str:
    # ScoreTriple values live in [0, 1]; tables render them as percentages.
    return "-" if value is None else f"{100.0 * value:.2f}"


def _csv_row(header: Sequence[str], values: Sequence[Any]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    writer.writerow(values)
    return buffer.getvalue()


def _md_table(header: Sequence[str], values: Sequence[Any]) -> str:
    head = "| " + " | ".join(str(h) for h in header) + " |"
    rule = "|" + "|".join(" --- " for _ in header) + "|"
    row = "| " + " | ".join(str(v) for v in values) + " |"
    return "\n".join([head, rule, row]) + "\n"


def report_to_csv(report: Any) -> str:
    if isinstance(report, RadReport):
        return _csv_row(
            ["attack", "ara", "ara_add", "rad"],
            [report.attack.value, report.ara_count, report.ara_add_count, _fmt(report.rad)],
        )
    if isinstance(report, AdvUnansReport):
        ans, unans = report.answerable, report.unanswerable
        return _csv_row(
            ["attack", "ans_ara", "ans_ara_add", "ans_rad", "unans_ara", "unans_ara_add", "unans_rad"],
            [
                report.attack.value,
                ans.ara_count if ans else "-",
                ans.ara_add_count if ans else "-",
                _fmt(ans.rad if ans else None),
                unans.ara_count if unans else "-",
                unans.ara_add_count if unans else "-",
                _fmt(unans.rad if unans else None),
            ],
        )
    if isinstance(report, UnansReport):
        taxonomy = report.taxonomy or {}
        return _csv_row(
            ["acc", "acc_ans", "acc_unans", "false_unans_rate", "hallu", "cor"],
            [
                _fmt(report.acc_all),
                _fmt(report.acc_answerable),
                _fmt(report.acc_unanswerable),
                _fmt(report.false_unans_rate),
                _fmt(taxonomy.get(UnansOutcome.HALLUCINATION)),
                _fmt(taxonomy.get(UnansOutcome.CORRECT)),
            ],
        )
    if isinstance(report, ConflictReport):
        return _csv_row(
            ["acc", "acc_c", "acc_nc", "c_count", "nc_count"],
            [
                _fmt(report.acc_all),
                _fmt(report.acc_conflicting),
                _fmt(report.acc_nonconflicting),
                report.conflicting_count,
                report.nonconflicting_count,
            ],
        )
    if isinstance(report, StubbornReport):
        return _csv_row(
            ["a_to_a", "a_to_c", "a_to_u", "ara"],
            [_fmt(report.a_to_a), _fmt(report.a_to_c), _fmt(report.a_to_u), report.ara_count],
        )
    if isinstance(report, BaselineReport):
        cb, rt = report.closed_book, report.retrieval
        return _csv_row(
            ["closed_acc", "closed_em", "closed_f1", "retr_acc", "retr_em", "retr_f1", "par"],
            [
                _fmt_pct(cb.acc if cb else None),
                _fmt_pct(cb.em if cb else None),
                _fmt_pct(cb.f1 if cb else None),
                _fmt_pct(rt.acc if rt else None),
                _fmt_pct(rt.em if rt else None),
                _fmt_pct(rt.f1 if rt else None),
                _fmt(report.par),
            ],
        )
    if isinstance(report, ParReport):
        return _csv_row(["par", "unans_count"], [_fmt(report.par), report.unanswerable_count])
    if isinstance(report, DatasetStats):
        return _csv_row(
            ["size", "recall_at_k", "unans_fraction"],
            [report.size, f"{report.recall_at_k:.2f}", f"{report.unans_fraction:.2f}"],
        )
    raise TypeError(f"no CSV renderer for {type(report).__name__}")


def report_to_markdown(report: Any) -> str:
    if isinstance(report, RadReport):
        return _md_table(
            ["attack", "ARA", "ARA-Add", "RAD"],
            [report.attack.value, report.ara_count, report.ara_add_count, _fmt(report.rad)],
        )
    if isinstance(report, AdvUnansReport):
        ans, unans = report.answerable, report.unanswerable
        return _md_table(
            [f"{report.attack.value} (Ans.)", f"{report.attack.value} (Unans.)"],
            [_fmt(ans.rad if ans else None), _fmt(unans.rad if unans else None)],
        )
    if isinstance(report, UnansReport):
        taxonomy = report.taxonomy or {}
        accs = _md_table(
            ["Acc", "Acc (ans)", "Acc (unans)", "False unans"],
            [
                _fmt(report.acc_all),
                _fmt(report.acc_answerable),
                _fmt(report.acc_unanswerable),
                _fmt(report.false_unans_rate),
            ],
        )
        tax = _md_table(
            ["Acc.", "Hallu.", "Cor."],
            [
                _fmt(taxonomy.get(UnansOutcome.ACC_UNANS)),
                _fmt(taxonomy.get(UnansOutcome.HALLUCINATION)),
                _fmt(taxonomy.get(UnansOutcome.CORRECT)),
            ],
        )
        return accs + "\n" + tax
    if isinstance(report, ConflictReport):
        return _md_table(
            ["Acc", "Acc (C)", "Acc (NC)"],
            [_fmt(report.acc_all), _fmt(report.acc_conflicting), _fmt(report.acc_nonconflicting)],
        )
    if isinstance(report, StubbornReport):
        return _md_table(
            ["A→A", "A→C", "A→U"],
            [_fmt(report.a_to_a), _fmt(report.a_to_c), _fmt(report.a_to_u)],
        )
    if isinstance(report, BaselineReport):
        cb, rt = report.closed_book, report.retrieval
        header = ["setting", "Acc", "EM", "F1"]
        lines = ["| " + " | ".join(header) + " |", "|" + "|".join(" --- " for _ in header) + "|"]
        if cb:
            lines.append(f"| closed_book | {_fmt_pct(cb.acc)} | {_fmt_pct(cb.em)} | {_fmt_pct(cb.f1)} |")
        if rt:
            lines.append(f"| retrieval | {_fmt_pct(rt.acc)} | {_fmt_pct(rt.em)} | {_fmt_pct(rt.f1)} |")
        table = "\n".join(lines) + "\n"
        if report.par is not None:
            table += f"\nPAR: {_fmt(report.par)}\n"
        return table
    if isinstance(report, ParReport):
        return _md_table(["PAR", "unanswerable"], [_fmt(report.par), report.unanswerable_count])
    if isinstance(report, DatasetStats):
        return _md_table(
            ["Size", "Recall@k", "Unans"],
            [report.size, f"{report.recall_at_k:.2f}", f"{report.unans_fraction:.2f}"],
        )
    raise TypeError(f"no markdown renderer for {type(report).__name__}")


def report_to_dict(report: Any) -> dict[str, Any]:
    if isinstance(report, DatasetStats):
        return {
            "report_type": "stats",
            "size": report.size,
            "recall_at_k": report.recall_at_k,
            "unans_fraction": report.unans_fraction,
        }
    return report.to_dict()


def emit_report(
    report: Any,
    out_dir: str | Path,
    formats: Sequence[str] = ("json", "csv", "markdown"),
) -> dict[str, Path]:
    """Write report.{json,csv,md} into `out_dir`; JSON is the lossless form."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for fmt in formats:
        if fmt == "json":
            path = out / "report.json"
            payload = json.dumps(report_to_dict(report), indent=2, ensure_ascii=False, sort_keys=True)
            path.write_text(payload + "\n", encoding="utf-8")
        elif fmt == "csv":
            path = out / "report.csv"
            path.write_text(report_to_csv(report), encoding="utf-8")
        elif fmt == "markdown":
            path = out / "report.md"
            path.write_text(report_to_markdown(report), encoding="utf-8")
        else:
            raise ValueError(f"unknown report format {fmt!r}")
        written[fmt] = path
    return written

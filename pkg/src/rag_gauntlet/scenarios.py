"""Prompt construction, generation runs, and the experiment evaluators.

All aggregation happens after a deterministic sort by example id, so reports
do not depend on completion order or concurrency level. Every report carries
the example-id lists behind each number so aggregates can be recomputed from
the JSON alone.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .corpus import QAExample
from .services import ChatClient, evaluation_request
from .textmetrics import (
    ScoreTriple,
    StubbornOutcome,
    UnansOutcome,
    aggregate,
    classify_stubborn_outcome,
    classify_unans_outcome,
    contains_token,
    detect_conflict_response,
    exact_match,
    f1,
    is_correct,
    normalize,
)

logger = logging.getLogger(__name__)


class PromptKind(Enum):
    NORMAL = "normal"
    UNANS = "unans"
    CONFLICT = "conflict"
    CLOSED_BOOK = "closed"


class Attack(Enum):
    GENADV = "genadv"
    RANDOM = "random"
    TOPK = "topk"
    CONFLICT = "conflict"


# Instruction line per prompt kind; the surrounding frame is fixed below.
_INSTRUCTIONS = {
    PromptKind.NORMAL: (
        "Use the above documents to answer the subsequent question. Please provide the "
        "answer as a single word or term, without forming a complete sentence."
    ),
    PromptKind.UNANS: (
        "Use the above documents to answer the subsequent question. Please provide the "
        "answer as a single word or term, without forming a complete sentence. If the "
        "answer cannot be found, write 'unanswerable'"
    ),
    PromptKind.CONFLICT: (
        "Use the above documents to answer the subsequent question. Please provide the "
        "answer as a single word or term, without forming a complete sentence. If "
        "multiple documents present different answers, please respond with 'conflict' "
        "to indicate the presence of conflicting information."
    ),
}

_CLOSED_BOOK_INSTRUCTION = (
    "Answer the following question. Please provide the answer as a single word or "
    "term, without forming a complete sentence."
)


def build_prompt(kind: PromptKind, example: QAExample) -> str:
    """Render the prompt for one example; documents appear in presentation order."""
    if kind is PromptKind.CLOSED_BOOK:
        return f"{_CLOSED_BOOK_INSTRUCTION} Q: {example.question} A:"
    if not example.documents:
        raise ValueError(f"example {example.id} has no documents for prompt kind {kind.value}")
    blocks = "\n".join(
        f"Document {i} (Title: {doc.title}): {doc.text}"
        for i, doc in enumerate(example.documents, start=1)
    )
    return (
        f"Documents:{blocks}\n{_INSTRUCTIONS[kind]}\nQuestion: {example.question}\nAnswer:"
    )


@dataclass(frozen=True)
class GenerationRecord:
    example_id: str
    prompt_kind: PromptKind
    model_id: str
    rendered_prompt: str
    response: str
    cached: bool


class GenerationRunError(RuntimeError):
    """Raised when the per-example failure rate exceeds the configured ceiling."""

    def __init__(self, message: str, failed_ids: list[str]):
        super().__init__(message)
        self.failed_ids = failed_ids


def run_generation(
    dataset: Sequence[QAExample],
    client: ChatClient,
    model_id: str,
    kind: PromptKind,
    *,
    concurrency: int = 4,
    error_ceiling: float = 0.01,
    max_tokens: int = 100,
) -> list[GenerationRecord]:
    """One evaluation call per example, in dataset order, fully cached.

    Individual failures are tolerated up to `error_ceiling` (a fraction);
    beyond it the whole run fails with the offending ids.
    """
    if not dataset:
        return []

    def run_one(example: QAExample) -> GenerationRecord | Exception:
        prompt = build_prompt(kind, example)
        try:
            response = client.generate(evaluation_request(model_id, prompt, max_tokens=max_tokens))
        except Exception as exc:
            return exc
        return GenerationRecord(
            example_id=example.id,
            prompt_kind=kind,
            model_id=model_id,
            rendered_prompt=prompt,
            response=response.content,
            cached=response.cached,
        )

    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        outcomes = list(pool.map(run_one, dataset))
    records: list[GenerationRecord] = []
    failed: list[str] = []
    for example, outcome in zip(dataset, outcomes):
        if isinstance(outcome, Exception):
            failed.append(example.id)
            logger.warning("generation failed for %s: %s", example.id, outcome)
        else:
            records.append(outcome)
    if failed and len(failed) / len(dataset) > error_ceiling:
        raise GenerationRunError(
            f"{len(failed)}/{len(dataset)} generations failed (ceiling "
            f"{error_ceiling:.2%}): {failed[:20]}",
            failed,
        )
    return records


def write_records(records: Sequence[GenerationRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(
                    {
                        "example_id": record.example_id,
                        "prompt_kind": record.prompt_kind.value,
                        "model_id": record.model_id,
                        "rendered_prompt": record.rendered_prompt,
                        "response": record.response,
                        "cached": record.cached,
                    },
                    ensure_ascii=False,
                )
                + "\n"
            )


def read_records(path: str | Path) -> list[GenerationRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            records.append(
                GenerationRecord(
                    example_id=row["example_id"],
                    prompt_kind=PromptKind(row["prompt_kind"]),
                    model_id=row["model_id"],
                    rendered_prompt=row["rendered_prompt"],
                    response=row["response"],
                    cached=bool(row["cached"]),
                )
            )
    return records


def _responses_by_id(records: Sequence[GenerationRecord]) -> dict[str, str]:
    out: dict[str, str] = {}
    for record in records:
        if record.example_id in out:
            raise ValueError(f"duplicate record for example {record.example_id}")
        out[record.example_id] = record.response
    return out


def compute_ara(
    records: Sequence[GenerationRecord], gold: Mapping[str, Sequence[str]]
) -> set[str]:
    """Ids the model answers correctly from unperturbed retrieval."""
    return {
        record.example_id
        for record in records
        if is_correct(record.response, gold[record.example_id])
    }


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class RadReport:
    attack: Attack
    ara_count: int
    ara_add_count: int
    rad: float
    ara_ids: list[str] = field(default_factory=list)
    ara_add_ids: list[str] = field(default_factory=list)
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "rad",
            "attack": self.attack.value,
            "ara_count": self.ara_count,
            "ara_add_count": self.ara_add_count,
            "rad": self.rad,
            "ara_ids": self.ara_ids,
            "ara_add_ids": self.ara_add_ids,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RadReport":
        return cls(
            attack=Attack(data["attack"]),
            ara_count=data["ara_count"],
            ara_add_count=data["ara_add_count"],
            rad=data["rad"],
            ara_ids=list(data["ara_ids"]),
            ara_add_ids=list(data["ara_add_ids"]),
            manifest=data.get("manifest"),
        )


@dataclass
class AdvUnansReport:
    attack: Attack
    answerable: RadReport | None
    unanswerable: RadReport | None
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "adv_unans",
            "attack": self.attack.value,
            "answerable": self.answerable.to_dict() if self.answerable else None,
            "unanswerable": self.unanswerable.to_dict() if self.unanswerable else None,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AdvUnansReport":
        return cls(
            attack=Attack(data["attack"]),
            answerable=RadReport.from_dict(data["answerable"]) if data["answerable"] else None,
            unanswerable=(
                RadReport.from_dict(data["unanswerable"]) if data["unanswerable"] else None
            ),
            manifest=data.get("manifest"),
        )


@dataclass
class UnansReport:
    acc_all: float
    acc_answerable: float | None
    acc_unanswerable: float | None
    taxonomy: dict[UnansOutcome, float] | None
    false_unans_rate: float | None
    answerable_count: int
    unanswerable_count: int
    dual_hit_count: int
    outcome_ids: dict[str, list[str]] = field(default_factory=dict)
    correct_ids: list[str] = field(default_factory=list)
    false_unans_ids: list[str] = field(default_factory=list)
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "unans",
            "acc_all": self.acc_all,
            "acc_answerable": self.acc_answerable,
            "acc_unanswerable": self.acc_unanswerable,
            "taxonomy": (
                {k.value: v for k, v in self.taxonomy.items()} if self.taxonomy else None
            ),
            "false_unans_rate": self.false_unans_rate,
            "answerable_count": self.answerable_count,
            "unanswerable_count": self.unanswerable_count,
            "dual_hit_count": self.dual_hit_count,
            "outcome_ids": self.outcome_ids,
            "correct_ids": self.correct_ids,
            "false_unans_ids": self.false_unans_ids,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "UnansReport":
        taxonomy = data["taxonomy"]
        return cls(
            acc_all=data["acc_all"],
            acc_answerable=data["acc_answerable"],
            acc_unanswerable=data["acc_unanswerable"],
            taxonomy=(
                {UnansOutcome(k): v for k, v in taxonomy.items()} if taxonomy else None
            ),
            false_unans_rate=data["false_unans_rate"],
            answerable_count=data["answerable_count"],
            unanswerable_count=data["unanswerable_count"],
            dual_hit_count=data["dual_hit_count"],
            outcome_ids={k: list(v) for k, v in data["outcome_ids"].items()},
            correct_ids=list(data["correct_ids"]),
            false_unans_ids=list(data["false_unans_ids"]),
            manifest=data.get("manifest"),
        )


@dataclass
class ConflictReport:
    acc_all: float
    acc_conflicting: float | None
    acc_nonconflicting: float | None
    conflicting_count: int
    nonconflicting_count: int
    conflicting_correct_ids: list[str] = field(default_factory=list)
    nonconflicting_correct_ids: list[str] = field(default_factory=list)
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "conflict",
            "acc_all": self.acc_all,
            "acc_conflicting": self.acc_conflicting,
            "acc_nonconflicting": self.acc_nonconflicting,
            "conflicting_count": self.conflicting_count,
            "nonconflicting_count": self.nonconflicting_count,
            "conflicting_correct_ids": self.conflicting_correct_ids,
            "nonconflicting_correct_ids": self.nonconflicting_correct_ids,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ConflictReport":
        return cls(
            acc_all=data["acc_all"],
            acc_conflicting=data["acc_conflicting"],
            acc_nonconflicting=data["acc_nonconflicting"],
            conflicting_count=data["conflicting_count"],
            nonconflicting_count=data["nonconflicting_count"],
            conflicting_correct_ids=list(data["conflicting_correct_ids"]),
            nonconflicting_correct_ids=list(data["nonconflicting_correct_ids"]),
            manifest=data.get("manifest"),
        )


@dataclass
class StubbornReport:
    a_to_a: float
    a_to_c: float
    a_to_u: float
    ara_count: int
    excluded_missing_artifact: int
    dual_hit_count: int
    outcome_ids: dict[str, list[str]] = field(default_factory=dict)
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "stubborn",
            "a_to_a": self.a_to_a,
            "a_to_c": self.a_to_c,
            "a_to_u": self.a_to_u,
            "ara_count": self.ara_count,
            "excluded_missing_artifact": self.excluded_missing_artifact,
            "dual_hit_count": self.dual_hit_count,
            "outcome_ids": self.outcome_ids,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "StubbornReport":
        return cls(
            a_to_a=data["a_to_a"],
            a_to_c=data["a_to_c"],
            a_to_u=data["a_to_u"],
            ara_count=data["ara_count"],
            excluded_missing_artifact=data["excluded_missing_artifact"],
            dual_hit_count=data["dual_hit_count"],
            outcome_ids={k: list(v) for k, v in data["outcome_ids"].items()},
            manifest=data.get("manifest"),
        )


@dataclass
class BaselineReport:
    closed_book: ScoreTriple | None
    retrieval: ScoreTriple | None
    par: float | None
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        def triple(t: ScoreTriple | None):
            return {"acc": t.acc, "em": t.em, "f1": t.f1} if t else None

        return {
            "report_type": "baseline",
            "closed_book": triple(self.closed_book),
            "retrieval": triple(self.retrieval),
            "par": self.par,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "BaselineReport":
        def triple(d):
            return ScoreTriple(acc=d["acc"], em=d["em"], f1=d["f1"]) if d else None

        return cls(
            closed_book=triple(data["closed_book"]),
            retrieval=triple(data["retrieval"]),
            par=data["par"],
            manifest=data.get("manifest"),
        )


@dataclass
class ParReport:
    par: float
    unanswerable_count: int
    correct_ids: list[str] = field(default_factory=list)
    manifest: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "report_type": "par",
            "par": self.par,
            "unanswerable_count": self.unanswerable_count,
            "correct_ids": self.correct_ids,
            "manifest": self.manifest,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ParReport":
        return cls(
            par=data["par"],
            unanswerable_count=data["unanswerable_count"],
            correct_ids=list(data["correct_ids"]),
            manifest=data.get("manifest"),
        )


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------


class RadUndefinedError(ValueError):
    """RAD is undefined when the accurate set is empty."""


def eval_rad(
    base_records: Sequence[GenerationRecord],
    perturbed_records: Sequence[GenerationRecord],
    gold: Mapping[str, Sequence[str]],
    attack: Attack,
) -> RadReport:
    """Robustness under an added document: share of the accurate set that stays correct."""
    base_ids = {r.example_id for r in base_records}
    perturbed_by_id = _responses_by_id(perturbed_records)
    if base_ids != set(perturbed_by_id):
        raise ValueError("base and perturbed runs must cover the same example set")
    ara = compute_ara(base_records, gold)
    if not ara:
        raise RadUndefinedError("RAD is undefined: the accurate set is empty")
    ara_add = {eid for eid in ara if is_correct(perturbed_by_id[eid], gold[eid])}
    return RadReport(
        attack=attack,
        ara_count=len(ara),
        ara_add_count=len(ara_add),
        rad=100.0 * len(ara_add) / len(ara),
        ara_ids=sorted(ara),
        ara_add_ids=sorted(ara_add),
    )


def eval_adv_unans(
    base_records: Sequence[GenerationRecord],
    perturbed_records: Sequence[GenerationRecord],
    labels: Mapping[str, bool],
    gold: Mapping[str, Sequence[str]],
    attack: Attack,
) -> AdvUnansReport:
    """RAD per answerability partition, from a base run under the unanswerable
    prompt with relabeled gold."""
    base_ids = {r.example_id for r in base_records}
    perturbed_by_id = _responses_by_id(perturbed_records)
    if base_ids != set(perturbed_by_id):
        raise ValueError("base and perturbed runs must cover the same example set")
    ara = compute_ara(base_records, gold)
    reports: dict[bool, RadReport | None] = {}
    for answerable in (True, False):
        part = {eid for eid in ara if labels[eid] == answerable}
        if not part:
            reports[answerable] = None
            continue
        part_add = {eid for eid in part if is_correct(perturbed_by_id[eid], gold[eid])}
        reports[answerable] = RadReport(
            attack=attack,
            ara_count=len(part),
            ara_add_count=len(part_add),
            rad=100.0 * len(part_add) / len(part),
            ara_ids=sorted(part),
            ara_add_ids=sorted(part_add),
        )
    return AdvUnansReport(attack=attack, answerable=reports[True], unanswerable=reports[False])


def eval_unanswerable(
    records: Sequence[GenerationRecord],
    labels: Mapping[str, bool],
    originals: Mapping[str, Sequence[str]],
) -> UnansReport:
    """Accuracy per answerability subset plus the outcome taxonomy.

    Unanswerable examples are scored against the relabeled gold
    ["unanswerable"]; answerable ones against their original answers.
    """
    ordered = sorted(records, key=lambda r: r.example_id)
    correct_ids: list[str] = []
    outcomes: list[UnansOutcome] = []
    outcome_ids: dict[str, list[str]] = {v.value: [] for v in UnansOutcome}
    false_unans_ids: list[str] = []
    answerable_correct = 0
    unanswerable_correct = 0
    answerable_count = 0
    unanswerable_count = 0
    dual_hits = 0
    for record in ordered:
        eid = record.example_id
        if labels[eid]:
            answerable_count += 1
            if is_correct(record.response, originals[eid]):
                answerable_correct += 1
                correct_ids.append(eid)
            if contains_token(record.response, "unanswerable"):
                false_unans_ids.append(eid)
        else:
            unanswerable_count += 1
            if is_correct(record.response, ["unanswerable"]):
                unanswerable_correct += 1
                correct_ids.append(eid)
            outcome = classify_unans_outcome(record.response, originals[eid])
            outcomes.append(outcome)
            outcome_ids[outcome.value].append(eid)
            if outcome is UnansOutcome.ACC_UNANS and is_correct(record.response, originals[eid]):
                dual_hits += 1
    total = answerable_count + unanswerable_count
    if total == 0:
        raise ValueError("no records to evaluate")
    return UnansReport(
        acc_all=100.0 * (answerable_correct + unanswerable_correct) / total,
        acc_answerable=(
            100.0 * answerable_correct / answerable_count if answerable_count else None
        ),
        acc_unanswerable=(
            100.0 * unanswerable_correct / unanswerable_count if unanswerable_count else None
        ),
        taxonomy=aggregate(outcomes) if outcomes else None,
        false_unans_rate=(
            100.0 * len(false_unans_ids) / answerable_count if answerable_count else None
        ),
        answerable_count=answerable_count,
        unanswerable_count=unanswerable_count,
        dual_hit_count=dual_hits,
        outcome_ids=outcome_ids,
        correct_ids=correct_ids,
        false_unans_ids=false_unans_ids,
    )


@dataclass(frozen=True)
class ConflictPartition:
    """C = answerable examples with a crafted conflict; NC = answerable skips."""

    conflicting: frozenset[str]
    nonconflicting: frozenset[str]

    def __post_init__(self) -> None:
        if self.conflicting & self.nonconflicting:
            raise ValueError("conflicting and non-conflicting sets overlap")


def eval_conflict_detection(
    records: Sequence[GenerationRecord],
    partition: ConflictPartition,
    gold: Mapping[str, Sequence[str]],
) -> ConflictReport:
    """Conflicting examples score by saying 'conflict'; the rest by answering."""
    c_correct: list[str] = []
    nc_correct: list[str] = []
    c_seen = 0
    nc_seen = 0
    for record in sorted(records, key=lambda r: r.example_id):
        eid = record.example_id
        if eid in partition.conflicting:
            c_seen += 1
            if detect_conflict_response(record.response):
                c_correct.append(eid)
        elif eid in partition.nonconflicting:
            nc_seen += 1
            if is_correct(record.response, gold[eid]):
                nc_correct.append(eid)
        else:
            raise ValueError(f"record {eid} is in neither partition")
    total = c_seen + nc_seen
    if total == 0:
        raise ValueError("no records to evaluate")
    return ConflictReport(
        acc_all=100.0 * (len(c_correct) + len(nc_correct)) / total,
        acc_conflicting=100.0 * len(c_correct) / c_seen if c_seen else None,
        acc_nonconflicting=100.0 * len(nc_correct) / nc_seen if nc_seen else None,
        conflicting_count=c_seen,
        nonconflicting_count=nc_seen,
        conflicting_correct_ids=c_correct,
        nonconflicting_correct_ids=nc_correct,
    )


def eval_stubbornness(
    ara_ids: set[str],
    perturbed_records: Sequence[GenerationRecord],
    gold: Mapping[str, Sequence[str]],
    artifacts: Mapping[str, Any],
) -> StubbornReport:
    """Answer retention on the accurate set once the conflict document is added.

    `artifacts` maps example id to an object with a `substitute_surface`
    attribute; accurate-set members without one are excluded and counted.
    """
    responses = _responses_by_id(perturbed_records)
    evaluated = sorted(eid for eid in ara_ids if eid in artifacts)
    excluded = len(ara_ids) - len(evaluated)
    if not evaluated:
        raise ValueError("no accurate-set example has a conflict artifact")
    outcomes: list[StubbornOutcome] = []
    outcome_ids: dict[str, list[str]] = {v.value: [] for v in StubbornOutcome}
    dual_hits = 0
    for eid in evaluated:
        if eid not in responses:
            raise ValueError(f"missing perturbed record for example {eid}")
        substitute = artifacts[eid].substitute_surface
        outcome = classify_stubborn_outcome(responses[eid], gold[eid], substitute)
        outcomes.append(outcome)
        outcome_ids[outcome.value].append(eid)
        if outcome is StubbornOutcome.A_TO_A and normalize(substitute) in normalize(responses[eid]):
            dual_hits += 1
    shares = aggregate(outcomes)
    return StubbornReport(
        a_to_a=shares[StubbornOutcome.A_TO_A],
        a_to_c=shares[StubbornOutcome.A_TO_C],
        a_to_u=shares[StubbornOutcome.A_TO_U],
        ara_count=len(evaluated),
        excluded_missing_artifact=excluded,
        dual_hit_count=dual_hits,
        outcome_ids=outcome_ids,
    )


def eval_baseline(
    records: Sequence[GenerationRecord], gold: Mapping[str, Sequence[str]]
) -> ScoreTriple:
    """Mean substring accuracy, exact match, and F1 over a run."""
    if not records:
        raise ValueError("no records to evaluate")
    n = len(records)
    acc = sum(is_correct(r.response, gold[r.example_id]) for r in records) / n
    em = sum(exact_match(r.response, gold[r.example_id]) for r in records) / n
    f1_mean = sum(f1(r.response, gold[r.example_id]) for r in records) / n
    return ScoreTriple(acc=acc, em=em, f1=f1_mean)


def compute_par(
    records: Sequence[GenerationRecord],
    labels: Mapping[str, bool],
    gold: Mapping[str, Sequence[str]],
) -> float:
    """Share of unanswerable examples answered correctly under the normal prompt."""
    unans = [r for r in records if not labels[r.example_id]]
    if not unans:
        raise ValueError("PAR is undefined: no unanswerable examples")
    correct = sum(is_correct(r.response, gold[r.example_id]) for r in unans)
    return 100.0 * correct / len(unans)


REPORT_TYPES = {
    "rad": RadReport,
    "adv_unans": AdvUnansReport,
    "unans": UnansReport,
    "conflict": ConflictReport,
    "stubborn": StubbornReport,
    "baseline": BaselineReport,
    "par": ParReport,
}


def report_from_dict(data: Mapping[str, Any]):
    kind = data.get("report_type")
    if kind not in REPORT_TYPES:
        raise ValueError(f"unknown report type {kind!r}")
    return REPORT_TYPES[kind].from_dict(data)

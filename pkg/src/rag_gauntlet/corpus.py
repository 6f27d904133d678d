"""QA examples with retrieved documents: ingestion, answerability labels, insertion."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

from .textmetrics import normalize


class DocumentOrigin(Enum):
    RETRIEVED = "retrieved"
    GENADV = "genadv"
    CONFLICT = "conflict"
    RANDOM = "random"
    TOPK_EXTRA = "topk_extra"


@dataclass(frozen=True)
class Document:
    """One passage shown to the model. For retrieved documents `rank` is the
    retriever rank (1 = best); for injected documents it is the 1-based
    presentation slot assigned at insertion time."""

    doc_id: str
    title: str
    text: str
    rank: int
    retrieval_score: float | None = None
    origin: DocumentOrigin = DocumentOrigin.RETRIEVED


@dataclass(frozen=True)
class InjectionInfo:
    """Provenance of a document inserted by a perturbation."""

    origin: DocumentOrigin
    position: int  # 0-based slot in the final presentation order
    artifact_id: str


@dataclass
class QAExample:
    """One evaluation unit: a question, its gold answers, and its documents
    in presentation order. `reserve_documents` holds contexts beyond top-k,
    kept for the rank-(k+1) baseline. `original_answers` is set when the gold
    was relabeled to "unanswerable"."""

    id: str
    question: str
    answers: list[str]
    documents: list[Document]
    reserve_documents: list[Document] = field(default_factory=list)
    original_answers: list[str] | None = None
    injected: InjectionInfo | None = None


@dataclass(frozen=True)
class AnswerabilityLabel:
    answerable: bool
    hit_mask: tuple[bool, ...]

    def __post_init__(self) -> None:
        if self.answerable != any(self.hit_mask):
            raise ValueError("answerable must equal any(hit_mask)")


@dataclass(frozen=True)
class DatasetStats:
    size: int
    recall_at_k: float
    unans_fraction: float


class DatasetLoadError(ValueError):
    """Raised when a dataset file violates the expected JSONL schema."""


def _require(raw: dict, key: str, lineno: int):
    if key not in raw:
        raise DatasetLoadError(f"line {lineno}: missing required field {key!r}")
    return raw[key]


def _parse_context(ctx: dict, rank: int, lineno: int, origin: DocumentOrigin) -> Document:
    if not isinstance(ctx, dict):
        raise DatasetLoadError(f"line {lineno}: context at rank {rank} is not an object")
    for key in ("id", "title", "text"):
        if key not in ctx:
            raise DatasetLoadError(f"line {lineno}: context at rank {rank} missing {key!r}")
    text = str(ctx["text"])
    if not text:
        raise DatasetLoadError(f"line {lineno}: context at rank {rank} has empty text")
    score = ctx.get("score")
    return Document(
        doc_id=str(ctx["id"]),
        title=str(ctx["title"]),
        text=text,
        rank=rank,
        retrieval_score=float(score) if score is not None else None,
        origin=origin,
    )


def _parse_line(raw: dict, lineno: int) -> tuple[str, str, list[str], list[dict]]:
    example_id = str(_require(raw, "id", lineno))
    question = str(_require(raw, "question", lineno))
    answers = _require(raw, "answers", lineno)
    if not isinstance(answers, list) or not answers:
        raise DatasetLoadError(f"line {lineno}: answers must be a non-empty list")
    answers = [str(a) for a in answers]
    for answer in answers:
        if not normalize(answer):
            raise DatasetLoadError(f"line {lineno}: answer {answer!r} is empty after normalization")
    ctxs = _require(raw, "ctxs", lineno)
    if not isinstance(ctxs, list) or not ctxs:
        raise DatasetLoadError(f"line {lineno}: ctxs must be a non-empty list")
    return example_id, question, answers, ctxs


def load_dataset(path: str | Path, k: int) -> list[QAExample]:
    """Load a retrieval-results JSONL file, truncating each example to its
    top-k contexts (file order). Contexts past k are kept in reserve."""
    if k <= 0:
        raise ValueError("k must be positive")
    examples: list[QAExample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetLoadError(f"line {lineno}: invalid JSON: {exc}") from exc
            example_id, question, answers, ctxs = _parse_line(raw, lineno)
            if example_id in seen:
                raise DatasetLoadError(f"line {lineno}: duplicate example id {example_id!r}")
            seen.add(example_id)
            documents = [
                _parse_context(ctx, rank, lineno, DocumentOrigin.RETRIEVED)
                for rank, ctx in enumerate(ctxs[:k], start=1)
            ]
            reserve = [
                _parse_context(ctx, rank, lineno, DocumentOrigin.RETRIEVED)
                for rank, ctx in enumerate(ctxs[k:], start=k + 1)
            ]
            examples.append(
                QAExample(
                    id=example_id,
                    question=question,
                    answers=answers,
                    documents=documents,
                    reserve_documents=reserve,
                )
            )
    return examples


def load_perturbed_dataset(path: str | Path) -> list[QAExample]:
    """Load a perturbed JSONL file, keeping every context and restoring the
    injected document's origin from the "injected" field."""
    examples: list[QAExample] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetLoadError(f"line {lineno}: invalid JSON: {exc}") from exc
            example_id, question, answers, ctxs = _parse_line(raw, lineno)
            if example_id in seen:
                raise DatasetLoadError(f"line {lineno}: duplicate example id {example_id!r}")
            seen.add(example_id)
            injected = None
            if "injected" in raw:
                info = raw["injected"]
                injected = InjectionInfo(
                    origin=DocumentOrigin(info["origin"]),
                    position=int(info["position"]),
                    artifact_id=str(info["artifact_id"]),
                )
            documents = []
            for idx, ctx in enumerate(ctxs):
                origin = DocumentOrigin.RETRIEVED
                if injected is not None and idx == injected.position:
                    origin = injected.origin
                documents.append(_parse_context(ctx, idx + 1, lineno, origin))
            examples.append(
                QAExample(
                    id=example_id,
                    question=question,
                    answers=answers,
                    documents=documents,
                    injected=injected,
                )
            )
    return examples


def write_dataset(examples: Sequence[QAExample], path: str | Path) -> None:
    """Write examples back to JSONL, including the "injected" provenance field."""
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            ctxs = []
            for doc in example.documents:
                ctx: dict = {"id": doc.doc_id, "title": doc.title, "text": doc.text}
                if doc.retrieval_score is not None:
                    ctx["score"] = doc.retrieval_score
                ctxs.append(ctx)
            row: dict = {
                "id": example.id,
                "question": example.question,
                "answers": example.answers,
                "ctxs": ctxs,
            }
            if example.injected is not None:
                row["injected"] = {
                    "origin": example.injected.origin.value,
                    "position": example.injected.position,
                    "artifact_id": example.injected.artifact_id,
                }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def label_answerability(
    example: QAExample, normalizer: Callable[[str], str] = normalize
) -> AnswerabilityLabel:
    """Mark which documents contain a gold answer (text and title both count)."""
    if not example.documents:
        raise ValueError(f"example {example.id} has no documents")
    norm_answers = [normalizer(a) for a in example.answers]
    hit_mask = tuple(
        any(ans in normalizer(doc.text + " " + doc.title) for ans in norm_answers)
        for doc in example.documents
    )
    return AnswerabilityLabel(answerable=any(hit_mask), hit_mask=hit_mask)


def relabel_unanswerable_gold(example: QAExample, label: AnswerabilityLabel) -> QAExample:
    """Replace the gold with the literal "unanswerable" for unanswerable examples.

    The original answers are preserved for taxonomy scoring. Idempotent.
    """
    if label.answerable:
        return example
    originals = example.original_answers if example.original_answers is not None else example.answers
    return replace(example, answers=["unanswerable"], original_answers=list(originals))


def dataset_stats(
    examples: Sequence[QAExample], labels: Sequence[AnswerabilityLabel]
) -> DatasetStats:
    if not examples:
        raise ValueError("dataset_stats requires a non-empty dataset")
    if len(examples) != len(labels):
        raise ValueError("examples and labels must align by index")
    answerable = sum(1 for label in labels if label.answerable)
    size = len(examples)
    return DatasetStats(
        size=size,
        recall_at_k=answerable / size,
        unans_fraction=(size - answerable) / size,
    )


def _stream_rng(global_seed: int, example_id: str, purpose: str) -> random.Random:
    # Purpose tag keeps the insertion stream independent of the donor-pick stream.
    tag = f"{global_seed}:{purpose}:{example_id}".encode("utf-8")
    digest = hashlib.blake2b(tag, digest_size=8).digest()
    return random.Random(int.from_bytes(digest, "big"))


def insert_document(example: QAExample, doc: Document, global_seed: int) -> QAExample:
    """Insert a synthesized document at a position drawn uniformly from the
    k+1 slots, deterministically per (global_seed, example id)."""
    if doc.origin is DocumentOrigin.RETRIEVED:
        raise ValueError("only synthesized documents can be inserted")
    k = len(example.documents)
    position = _stream_rng(global_seed, example.id, "insert").randrange(k + 1)
    placed = replace(doc, rank=position + 1)
    documents = list(example.documents[:position]) + [placed] + list(example.documents[position:])
    return replace(
        example,
        documents=documents,
        injected=InjectionInfo(origin=doc.origin, position=position, artifact_id=doc.doc_id),
    )


def pick_random_document(
    donor_pool: Sequence[QAExample], target_id: str, global_seed: int
) -> Document:
    """Pick a uniformly random document from a uniformly random other example."""
    eligible = [ex for ex in donor_pool if ex.id != target_id and ex.documents]
    if not eligible:
        raise ValueError(f"no eligible donor example for target {target_id!r}")
    rng = _stream_rng(global_seed, target_id, "random_doc")
    donor = eligible[rng.randrange(len(eligible))]
    doc = donor.documents[rng.randrange(len(donor.documents))]
    return replace(
        doc,
        doc_id=f"random:{donor.id}:{doc.doc_id}",
        origin=DocumentOrigin.RANDOM,
    )


def pick_rank_k_plus_one(raw_contexts: Sequence[Document], k: int) -> Document | None:
    """Return the rank-(k+1) context, or None when the example lacks one."""
    if k <= 0:
        raise ValueError("k must be positive")
    if len(raw_contexts) < k + 1:
        return None
    return replace(raw_contexts[k], origin=DocumentOrigin.TOPK_EXTRA)

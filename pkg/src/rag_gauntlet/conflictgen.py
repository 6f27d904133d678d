"""Conflicting-document crafting.

An answer sentence is generated from the Q-A pair, the entity aligned with the
gold answer is located, and it is swapped for the most similar same-type
entity from a pool, subject to a cosine ceiling of 0.8 that excludes aliases.
The spliced sentence is then expanded into a supporting passage.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import Document, DocumentOrigin, QAExample, label_answerability
from .genadv import (
    FilterReason,
    PipelineConfig,
    PipelineError,
    PipelineResult,
    Skip,
    StepExhausted,
    TraceEntry,
    generate_claim_passage,
    make_answer_sentence,
)
from .services import EntityMention, Services
from .textmetrics import normalize

logger = logging.getLogger(__name__)

SUBSTITUTE_SIMILARITY_CEILING = 0.8
DEFAULT_MAX_ENTITIES_PER_TYPE = 50_000


@dataclass(frozen=True)
class PoolEntry:
    surface: str
    vector: tuple[float, ...]


@dataclass
class EntityPool:
    """Type-indexed entity surfaces with embeddings, used to source substitutes."""

    entries: dict[str, list[PoolEntry]]
    source_digest: str
    dimension: int
    embedding_model: str
    _matrices: dict[str, tuple[list[str], list[str], np.ndarray, np.ndarray]] = field(
        default_factory=dict, repr=False, compare=False
    )

    def matrix_for(self, label: str) -> tuple[list[str], list[str], np.ndarray, np.ndarray]:
        """(surfaces, normalized surfaces, vector matrix, vector norms) per type."""
        if label not in self._matrices:
            pool_entries = self.entries[label]
            matrix = np.asarray([entry.vector for entry in pool_entries], dtype=float)
            norms = np.linalg.norm(matrix, axis=1)
            surfaces = [entry.surface for entry in pool_entries]
            self._matrices[label] = (surfaces, [normalize(s) for s in surfaces], matrix, norms)
        return self._matrices[label]


@dataclass
class ConflictArtifact:
    example_id: str
    answer_sentence: str
    answer_entity: EntityMention
    substitute_surface: str
    substitute_similarity: float
    conflict_sentence: str
    conflict_passage: str
    filter_trace: list[TraceEntry]


def build_entity_pool(
    corpus: Iterable[str],
    services: Services,
    *,
    max_entities_per_type: int = DEFAULT_MAX_ENTITIES_PER_TYPE,
) -> EntityPool:
    """Extract, deduplicate, and embed entities from a corpus of text blocks.

    Surfaces are deduplicated per type by normalized form; each type list is
    truncated to the `max_entities_per_type` most frequent surfaces.
    """
    if max_entities_per_type <= 0:
        raise ValueError("max_entities_per_type must be positive")
    digest = hashlib.sha256()
    # per type: normalized surface -> [count, first_seen_order, representative surface]
    stats: dict[str, dict[str, list]] = {}
    order = 0
    empty = True
    for block in corpus:
        empty = False
        digest.update(block.encode("utf-8") + b"\n")
        for mention in services.ner.extract_entities(block):
            norm_surface = normalize(mention.surface)
            if not norm_surface:
                continue
            per_type = stats.setdefault(mention.label, {})
            record = per_type.get(norm_surface)
            if record is None:
                per_type[norm_surface] = [1, order, mention.surface]
                order += 1
            else:
                record[0] += 1
    if empty:
        raise ValueError("corpus is empty")
    if not stats:
        raise ValueError("no entities extracted from corpus")

    entries: dict[str, list[PoolEntry]] = {}
    dimension: int | None = None
    for label, per_type in stats.items():
        ranked = sorted(per_type.values(), key=lambda rec: (-rec[0], rec[1]))
        kept = [rec[2] for rec in ranked[:max_entities_per_type]]
        vectors = services.embedder.embed_texts(kept, services.embed_model)
        pool_entries = []
        for surface, vector in zip(kept, vectors):
            if dimension is None:
                dimension = len(vector.values)
            elif len(vector.values) != dimension:
                raise ValueError("embedding dimension varies across pool entries")
            pool_entries.append(PoolEntry(surface=surface, vector=vector.values))
        entries[label] = pool_entries
    assert dimension is not None
    return EntityPool(
        entries=entries,
        source_digest=digest.hexdigest(),
        dimension=dimension,
        embedding_model=services.embed_model,
    )


def save_entity_pool(pool: EntityPool, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "kind": "entity_pool",
            "dimension": pool.dimension,
            "source_digest": pool.source_digest,
            "embedding_model": pool.embedding_model,
            "type_counts": {label: len(entries) for label, entries in pool.entries.items()},
        }
        fh.write(json.dumps(header, ensure_ascii=False) + "\n")
        for label, entries in pool.entries.items():
            for entry in entries:
                row = {"type": label, "surface": entry.surface, "vector": list(entry.vector)}
                fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_entity_pool(path: str | Path) -> EntityPool:
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("kind") != "entity_pool":
            raise ValueError(f"{path} is not an entity pool file")
        entries: dict[str, list[PoolEntry]] = {}
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            entries.setdefault(row["type"], []).append(
                PoolEntry(surface=row["surface"], vector=tuple(float(v) for v in row["vector"]))
            )
    return EntityPool(
        entries=entries,
        source_digest=header["source_digest"],
        dimension=int(header["dimension"]),
        embedding_model=str(header.get("embedding_model", "")),
    )


def locate_answer_entity(
    answer_sentence: str, answers: Sequence[str], services: Services
) -> EntityMention | None:
    """Find the earliest entity mention aligned with a gold answer.

    Alignment is bidirectional containment after normalization, since taggers
    over- or under-extend spans.
    """
    norm_answers = [normalize(answer) for answer in answers]
    for mention in services.ner.extract_entities(answer_sentence):
        norm_mention = normalize(mention.surface)
        if not norm_mention:
            continue
        for norm_answer in norm_answers:
            if norm_answer and (norm_answer in norm_mention or norm_mention in norm_answer):
                return mention
    return None


def select_substitute(
    mention: EntityMention, pool: EntityPool, services: Services
) -> tuple[str, float] | None:
    """Most similar same-type pool entry at or below the alias ceiling.

    Entries whose normalized surface equals the mention's are excluded; returns
    None when the type is missing or no entry qualifies.
    """
    if mention.label not in pool.entries or not pool.entries[mention.label]:
        return None
    vector = services.embedder.embed_texts([mention.surface], services.embed_model)[0]
    query = np.asarray(vector.values, dtype=float)
    if query.shape != (pool.dimension,):
        raise ValueError(
            f"mention embedding dimension {query.shape[0]} does not match pool dimension {pool.dimension}"
        )
    surfaces, norm_surfaces, matrix, norms = pool.matrix_for(mention.label)
    query_norm = float(np.linalg.norm(query))
    similarities = (matrix @ query) / (norms * query_norm)
    norm_mention = normalize(mention.surface)
    eligible = np.array(
        [norm_surface != norm_mention for norm_surface in norm_surfaces], dtype=bool
    ) & (similarities <= SUBSTITUTE_SIMILARITY_CEILING)
    if not eligible.any():
        return None
    masked = np.where(eligible, similarities, -np.inf)
    best = int(np.argmax(masked))
    return surfaces[best], float(similarities[best])


def make_conflict_sentence(answer_sentence: str, mention: EntityMention, substitute: str) -> str:
    """Splice the substitute over the mention span, leaving everything else intact."""
    if answer_sentence[mention.start : mention.end] != mention.surface:
        raise ValueError(
            f"mention span does not match sentence slice: {mention.surface!r} vs "
            f"{answer_sentence[mention.start:mention.end]!r}"
        )
    return answer_sentence[: mention.start] + substitute + answer_sentence[mention.end :]


def make_conflict_passage(
    conflict_sentence: str,
    substitute: str,
    answers: Sequence[str],
    services: Services,
    *,
    attempts: int = 3,
    forbid_answer_leak: bool = True,
    trace: list[TraceEntry] | None = None,
) -> str:
    """Supporting passage for the conflict claim.

    The passage must mention the substitute and, unless disabled, must not
    restate any gold answer; regenerated up to `attempts` times.
    """
    norm_substitute = normalize(substitute)
    norm_answers = [normalize(answer) for answer in answers]
    reason = FilterReason.GENERATION_EMPTY.value
    for attempt in range(1, attempts + 1):
        passage = generate_claim_passage(conflict_sentence, services, seed=attempt)
        if not passage:
            reason = FilterReason.GENERATION_EMPTY.value
        else:
            norm_passage = normalize(passage)
            if norm_substitute not in norm_passage:
                reason = "substitute_missing"
            elif forbid_answer_leak and any(na and na in norm_passage for na in norm_answers):
                reason = FilterReason.CONTAINS_ANSWER.value
            else:
                if trace is not None:
                    trace.append(("conflict_passage", "ok", "ok"))
                return passage
        if trace is not None:
            trace.append(("conflict_passage", "fail", reason))
    raise StepExhausted("conflict_passage", reason)


def verify_conflict_artifact(
    artifact: ConflictArtifact,
    answers: Sequence[str],
    pool: EntityPool | None = None,
    forbid_answer_leak: bool = True,
) -> list[str]:
    """Re-check every artifact invariant; returns a list of violations."""
    problems: list[str] = []
    if artifact.substitute_similarity > SUBSTITUTE_SIMILARITY_CEILING:
        problems.append(
            f"substitute similarity {artifact.substitute_similarity} > {SUBSTITUTE_SIMILARITY_CEILING}"
        )
    if normalize(artifact.substitute_surface) == normalize(artifact.answer_entity.surface):
        problems.append("substitute equals the answer entity after normalization")
    norm_passage = normalize(artifact.conflict_passage)
    if normalize(artifact.substitute_surface) not in norm_passage:
        problems.append("conflict passage does not mention the substitute")
    if forbid_answer_leak and any(normalize(a) in norm_passage for a in answers):
        problems.append("gold answer leaked into the conflict passage")
    if pool is not None:
        same_type = pool.entries.get(artifact.answer_entity.label, [])
        if normalize(artifact.substitute_surface) not in {
            normalize(entry.surface) for entry in same_type
        }:
            problems.append("substitute is not a same-type pool entry")
    return problems


def run_conflictgen(
    example: QAExample,
    pool: EntityPool,
    services: Services,
    config: PipelineConfig | None = None,
) -> ConflictArtifact | Skip:
    """Craft a conflicting document for one answerable example."""
    config = config or PipelineConfig()
    if not label_answerability(example).answerable:
        raise ValueError(f"example {example.id} is unanswerable; conflict crafting needs answerable input")
    trace: list[TraceEntry] = []
    answers = example.answers
    try:
        try:
            answer_sentence = make_answer_sentence(example.question, answers[0], services)
        except StepExhausted as exc:
            trace.append(("answer_sentence", "fail", exc.reason))
            return Skip(example.id, exc.stage, exc.reason, trace)
        trace.append(("answer_sentence", "ok", "ok"))

        mention = locate_answer_entity(answer_sentence, answers, services)
        if mention is None:
            trace.append(("answer_entity", "fail", "no_answer_entity"))
            return Skip(example.id, "answer_entity", "no_answer_entity", trace)
        trace.append(("answer_entity", "ok", "ok"))

        selected = select_substitute(mention, pool, services)
        if selected is None:
            trace.append(("substitute", "fail", "no_substitute"))
            return Skip(example.id, "substitute", "no_substitute", trace)
        substitute, similarity = selected
        trace.append(("substitute", "ok", "ok"))

        conflict_sentence = make_conflict_sentence(answer_sentence, mention, substitute)
        try:
            conflict_passage = make_conflict_passage(
                conflict_sentence,
                substitute,
                answers,
                services,
                attempts=config.attempts,
                forbid_answer_leak=config.forbid_answer_leak,
                trace=trace,
            )
        except StepExhausted as exc:
            return Skip(example.id, exc.stage, exc.reason, trace)
    except PipelineError:
        raise
    except Exception as exc:
        raise PipelineError(f"example {example.id}: {exc}") from exc

    artifact = ConflictArtifact(
        example_id=example.id,
        answer_sentence=answer_sentence,
        answer_entity=mention,
        substitute_surface=substitute,
        substitute_similarity=similarity,
        conflict_sentence=conflict_sentence,
        conflict_passage=conflict_passage,
        filter_trace=trace,
    )
    problems = verify_conflict_artifact(
        artifact, answers, pool=pool, forbid_answer_leak=config.forbid_answer_leak
    )
    if problems:
        raise PipelineError(f"example {example.id}: artifact invariant violated: {problems}")
    return artifact


def conflict_document(artifact: ConflictArtifact) -> Document:
    """Build the injectable document; the synthetic title is the conflict sentence."""
    return Document(
        doc_id=f"conflict:{artifact.example_id}",
        title=artifact.conflict_sentence,
        text=artifact.conflict_passage,
        rank=1,
        origin=DocumentOrigin.CONFLICT,
    )


def run_conflictgen_batch(
    examples: Sequence[QAExample],
    pool: EntityPool,
    services: Services,
    config: PipelineConfig | None = None,
    concurrency: int = 1,
) -> PipelineResult:
    """Craft conflicts over answerable examples; emitted vs skipped defines C vs NC."""
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as executor:
        outcomes = list(
            executor.map(lambda ex: run_conflictgen(ex, pool, services, config), examples)
        )
    artifacts = [o for o in outcomes if isinstance(o, ConflictArtifact)]
    skips = [o for o in outcomes if isinstance(o, Skip)]
    return PipelineResult(artifacts=artifacts, skips=skips)


def write_conflict_sidecar(
    path: str | Path,
    artifacts: Sequence[ConflictArtifact],
    skips: Sequence[Skip] = (),
) -> None:
    """One JSONL row per answerable example: full artifacts, or skip provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        for artifact in artifacts:
            row = {
                "example_id": artifact.example_id,
                "answer_sentence": artifact.answer_sentence,
                "answer_entity": {
                    "surface": artifact.answer_entity.surface,
                    "label": artifact.answer_entity.label,
                    "start": artifact.answer_entity.start,
                    "end": artifact.answer_entity.end,
                },
                "substitute_surface": artifact.substitute_surface,
                "substitute_similarity": artifact.substitute_similarity,
                "conflict_sentence": artifact.conflict_sentence,
                "conflict_passage": artifact.conflict_passage,
                "filter_trace": [list(entry) for entry in artifact.filter_trace],
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
        for skip in skips:
            row = {
                "example_id": skip.example_id,
                "skip_reason": skip.reason,
                "skip_stage": skip.stage,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_conflict_sidecar(path: str | Path) -> tuple[dict[str, ConflictArtifact], list[Skip]]:
    artifacts: dict[str, ConflictArtifact] = {}
    skips: list[Skip] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            if "skip_reason" in row:
                skips.append(
                    Skip(row["example_id"], row.get("skip_stage", ""), row["skip_reason"])
                )
                continue
            entity = row["answer_entity"]
            artifacts[row["example_id"]] = ConflictArtifact(
                example_id=row["example_id"],
                answer_sentence=row["answer_sentence"],
                answer_entity=EntityMention(
                    surface=entity["surface"],
                    label=entity["label"],
                    start=entity["start"],
                    end=entity["end"],
                ),
                substitute_surface=row["substitute_surface"],
                substitute_similarity=float(row["substitute_similarity"]),
                conflict_sentence=row["conflict_sentence"],
                conflict_passage=row["conflict_passage"],
                filter_trace=[tuple(entry) for entry in row.get("filter_trace", [])],
            )
    return artifacts, skips

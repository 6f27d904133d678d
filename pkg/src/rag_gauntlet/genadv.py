"""Adversarial passage synthesis.

Pipeline per example: write an answer sentence from the Q-A pair, require at
least two named entities in it, have the model rewrite it with same-type
entity substitutions, filter candidates that leak a gold answer or stay too
close to the answer sentence (cosine >= 0.8), then expand the surviving
sentence into a short supporting passage and filter that for answer leakage.
"""

from __future__ import annotations

import json
import logging
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .corpus import Document, DocumentOrigin, QAExample
from .services import EntityMention, Services, cosine_similarity, generation_request
from .textmetrics import normalize

logger = logging.getLogger(__name__)

SIMILARITY_CEILING = 0.8

ANSWER_SENTENCE_INSTRUCTION = (
    "Please write a single sentence using the following question and answer. "
    "The sentence should include the answer and be as realistic as possible.:"
)

REVISION_INSTRUCTION = (
    "Rewrite the sentence by replacing the specified words with others, ensuring "
    "that the new sentence retains a meaning as close as possible to the original "
    "while not being identical. The words to replace are named entities, which "
    "should be substituted with entities of the same type. The revised sentence "
    "must also remain factually accurate."
)

CLAIM_PASSAGE_INSTRUCTION = (
    "Given a claim, write a concise, factual passage using 50 to 100 words to "
    "support it. Please write the passage in the style of Wikipedia:"
)


def answer_sentence_prompt(question: str, answer: str) -> str:
    return f"{ANSWER_SENTENCE_INSTRUCTION}\nQuestion: {question}\nAnswer: {answer}\nSentence:"


def revision_prompt(answer_sentence: str, entity_surfaces: str) -> str:
    return (
        f"{REVISION_INSTRUCTION}\nOriginal sentence: {answer_sentence}\n"
        f"Words to replace: {entity_surfaces}\nRevised sentence:"
    )


def claim_passage_prompt(claim: str) -> str:
    return f"{CLAIM_PASSAGE_INSTRUCTION}\nClaim: {claim}\nPassage:"


class FilterReason(Enum):
    OK = "ok"
    CONTAINS_ANSWER = "contains_answer"
    TOO_SIMILAR = "too_similar"
    TOO_FEW_ENTITIES = "too_few_entities"
    GENERATION_EMPTY = "generation_empty"


@dataclass(frozen=True)
class FilterVerdict:
    passed: bool
    reason: FilterReason
    similarity: float | None = None

    def __post_init__(self) -> None:
        if self.passed != (self.reason is FilterReason.OK):
            raise ValueError("passed must hold exactly when reason is OK")


# (stage, verdict, reason) where verdict is "ok", "fail", or "warn"
TraceEntry = tuple[str, str, str]


@dataclass
class Skip:
    """An example the pipeline could not perturb, with the deciding stage."""

    example_id: str
    stage: str
    reason: str
    trace: list[TraceEntry] = field(default_factory=list)


class StepExhausted(Exception):
    """A generative step ran out of attempts without an acceptable output."""

    def __init__(self, stage: str, reason: str):
        super().__init__(f"{stage}: {reason}")
        self.stage = stage
        self.reason = reason


class PipelineError(RuntimeError):
    """Service failure inside a per-example pipeline, tagged with the example id."""


@dataclass
class PipelineConfig:
    attempts: int = 3
    passage_word_range: tuple[int, int] = (30, 150)
    forbid_answer_leak: bool = True  # conflict passages may not restate the original answer


@dataclass
class AdversarialArtifact:
    example_id: str
    answer_sentence: str
    entities: list[EntityMention]
    adversarial_sentence: str
    adversarial_passage: str
    sentence_similarity: float
    attempts: int
    filter_trace: list[TraceEntry]


def _single_line(text: str) -> str:
    return " ".join(text.split())


def _ws_equal(a: str, b: str) -> bool:
    return _single_line(a) == _single_line(b)


def make_answer_sentence(
    question: str, answer: str, services: Services, *, attempts: int = 2
) -> str:
    """Generate a one-line sentence containing the answer.

    One regeneration is allowed when the model's sentence drops the answer;
    raises StepExhausted after that.
    """
    if not question or not answer:
        raise ValueError("question and answer must be non-empty")
    prompt = answer_sentence_prompt(question, answer)
    reason = FilterReason.GENERATION_EMPTY.value
    for attempt in range(1, attempts + 1):
        request = generation_request(services.chat_model, prompt, seed=attempt)
        sentence = _single_line(services.chat.generate(request).content)
        if not sentence:
            reason = FilterReason.GENERATION_EMPTY.value
            continue
        if normalize(answer) not in normalize(sentence):
            reason = "answer_missing"
            continue
        return sentence
    raise StepExhausted("answer_sentence", reason)


def gate_entities(answer_sentence: str, services: Services) -> list[EntityMention] | None:
    """Return the sentence's entities, or None when fewer than two are found."""
    mentions = services.ner.extract_entities(answer_sentence)
    if len(mentions) < 2:
        return None
    return mentions


def make_adversarial_sentence(
    answer_sentence: str, entities: Sequence[EntityMention], services: Services, *, seed: int = 1
) -> str:
    """One revision call; entity surfaces are listed in detection order."""
    if len(entities) < 2:
        raise ValueError("at least two entities are required")
    words = ", ".join(mention.surface for mention in entities)
    prompt = revision_prompt(answer_sentence, words)
    request = generation_request(services.chat_model, prompt, seed=seed)
    return _single_line(services.chat.generate(request).content)


def filter_adversarial_sentence(
    candidate: str, answer_sentence: str, answers: Sequence[str], services: Services
) -> FilterVerdict:
    """Reject candidates that leak a gold answer or embed too close to the original."""
    norm_candidate = normalize(candidate)
    if any(normalize(answer) in norm_candidate for answer in answers):
        return FilterVerdict(passed=False, reason=FilterReason.CONTAINS_ANSWER)
    cand_vec, ans_vec = services.embedder.embed_texts(
        [candidate, answer_sentence], services.embed_model
    )
    similarity = cosine_similarity(cand_vec, ans_vec)
    if similarity >= SIMILARITY_CEILING:
        return FilterVerdict(passed=False, reason=FilterReason.TOO_SIMILAR, similarity=similarity)
    return FilterVerdict(passed=True, reason=FilterReason.OK, similarity=similarity)


def generate_claim_passage(claim: str, services: Services, *, seed: int = 1) -> str:
    """One supporting-passage call for a claim (shared with conflict crafting)."""
    prompt = claim_passage_prompt(claim)
    request = generation_request(services.chat_model, prompt, seed=seed)
    return services.chat.generate(request).content.strip()


def make_adversarial_passage(
    adversarial_sentence: str,
    services: Services,
    *,
    seed: int = 1,
    word_range: tuple[int, int] = (30, 150),
) -> tuple[str, bool]:
    """Generate the supporting passage; regenerate once if the word count is
    outside `word_range`, then accept with a warning flag."""
    low, high = word_range
    passage = generate_claim_passage(adversarial_sentence, services, seed=seed)
    if not passage or low <= len(passage.split()) <= high:
        return passage, False
    retry = generate_claim_passage(adversarial_sentence, services, seed=seed + 1_000_000)
    if retry and low <= len(retry.split()) <= high:
        return retry, False
    return (retry or passage), True


def filter_adversarial_passage(passage: str, answers: Sequence[str]) -> FilterVerdict:
    if not passage.strip():
        return FilterVerdict(passed=False, reason=FilterReason.GENERATION_EMPTY)
    norm_passage = normalize(passage)
    if any(normalize(answer) in norm_passage for answer in answers):
        return FilterVerdict(passed=False, reason=FilterReason.CONTAINS_ANSWER)
    return FilterVerdict(passed=True, reason=FilterReason.OK)


def verify_adversarial_artifact(artifact: AdversarialArtifact, answers: Sequence[str]) -> list[str]:
    """Re-check every artifact invariant; returns a list of violations."""
    problems: list[str] = []
    if len(artifact.entities) < 2:
        problems.append("fewer than two entities")
    if artifact.sentence_similarity >= SIMILARITY_CEILING:
        problems.append(f"sentence similarity {artifact.sentence_similarity} >= {SIMILARITY_CEILING}")
    for name, text in (
        ("adversarial_sentence", artifact.adversarial_sentence),
        ("adversarial_passage", artifact.adversarial_passage),
    ):
        norm_text = normalize(text)
        if any(normalize(answer) in norm_text for answer in answers):
            problems.append(f"gold answer leaked into {name}")
    if not artifact.filter_trace or artifact.filter_trace[-1][2] != FilterReason.OK.value:
        problems.append("filter trace does not end with ok")
    return problems


def run_genadv(
    example: QAExample, services: Services, config: PipelineConfig | None = None
) -> AdversarialArtifact | Skip:
    """Run the full pipeline for one example.

    Each generative step gets up to `config.attempts` tries (the answer
    sentence keeps its own single-regeneration rule); exhaustion returns a
    Skip carrying the last verdict.
    """
    config = config or PipelineConfig()
    trace: list[TraceEntry] = []
    answers = example.answers
    try:
        try:
            answer_sentence = make_answer_sentence(example.question, answers[0], services)
        except StepExhausted as exc:
            trace.append(("answer_sentence", "fail", exc.reason))
            return Skip(example.id, exc.stage, exc.reason, trace)
        trace.append(("answer_sentence", "ok", "ok"))

        entities = gate_entities(answer_sentence, services)
        if entities is None:
            reason = FilterReason.TOO_FEW_ENTITIES.value
            trace.append(("entity_gate", "fail", reason))
            return Skip(example.id, "entity_gate", reason, trace)
        trace.append(("entity_gate", "ok", "ok"))

        attempts_used = 0
        adversarial_sentence: str | None = None
        similarity: float | None = None
        last_reason = FilterReason.GENERATION_EMPTY.value
        for attempt in range(1, config.attempts + 1):
            attempts_used += 1
            candidate = make_adversarial_sentence(answer_sentence, entities, services, seed=attempt)
            if not candidate:
                last_reason = FilterReason.GENERATION_EMPTY.value
                trace.append(("adversarial_sentence", "fail", last_reason))
                continue
            if _ws_equal(candidate, answer_sentence):
                last_reason = FilterReason.TOO_SIMILAR.value
                trace.append(("adversarial_sentence", "fail", last_reason))
                continue
            verdict = filter_adversarial_sentence(candidate, answer_sentence, answers, services)
            if not verdict.passed:
                last_reason = verdict.reason.value
                trace.append(("sentence_filter", "fail", last_reason))
                continue
            trace.append(("sentence_filter", "ok", "ok"))
            adversarial_sentence = candidate
            similarity = verdict.similarity
            break
        if adversarial_sentence is None or similarity is None:
            return Skip(example.id, "sentence_filter", last_reason, trace)

        passage: str | None = None
        for attempt in range(1, config.attempts + 1):
            attempts_used += 1
            text, warned = make_adversarial_passage(
                adversarial_sentence, services, seed=attempt, word_range=config.passage_word_range
            )
            if warned:
                trace.append(("adversarial_passage", "warn", "word_count"))
            verdict = filter_adversarial_passage(text, answers)
            if not verdict.passed:
                last_reason = verdict.reason.value
                trace.append(("passage_filter", "fail", last_reason))
                continue
            trace.append(("passage_filter", "ok", "ok"))
            passage = text
            break
        if passage is None:
            return Skip(example.id, "passage_filter", last_reason, trace)
    except StepExhausted as exc:
        trace.append((exc.stage, "fail", exc.reason))
        return Skip(example.id, exc.stage, exc.reason, trace)
    except Exception as exc:
        raise PipelineError(f"example {example.id}: {exc}") from exc

    artifact = AdversarialArtifact(
        example_id=example.id,
        answer_sentence=answer_sentence,
        entities=list(entities),
        adversarial_sentence=adversarial_sentence,
        adversarial_passage=passage,
        sentence_similarity=similarity,
        attempts=attempts_used,
        filter_trace=trace,
    )
    problems = verify_adversarial_artifact(artifact, answers)
    if problems:
        raise PipelineError(f"example {example.id}: artifact invariant violated: {problems}")
    return artifact


def adversarial_document(artifact: AdversarialArtifact) -> Document:
    """Build the injectable document; the synthetic title is the adversarial sentence."""
    return Document(
        doc_id=f"genadv:{artifact.example_id}",
        title=artifact.adversarial_sentence,
        text=artifact.adversarial_passage,
        rank=1,
        origin=DocumentOrigin.GENADV,
    )


@dataclass
class PipelineResult:
    """Outcome of a batch run; len(artifacts) + len(skips) == len(inputs)."""

    artifacts: list
    skips: list[Skip]

    def skip_counts(self) -> dict[str, int]:
        return dict(Counter(skip.reason for skip in self.skips))


def run_genadv_batch(
    examples: Sequence[QAExample],
    services: Services,
    config: PipelineConfig | None = None,
    concurrency: int = 1,
) -> PipelineResult:
    """Run the pipeline over a dataset; artifacts come back in input order."""
    with ThreadPoolExecutor(max_workers=max(1, concurrency)) as pool:
        outcomes = list(pool.map(lambda ex: run_genadv(ex, services, config), examples))
    artifacts = [o for o in outcomes if isinstance(o, AdversarialArtifact)]
    skips = [o for o in outcomes if isinstance(o, Skip)]
    return PipelineResult(artifacts=artifacts, skips=skips)


def write_adversarial_sidecar(
    path,
    artifacts: Sequence[AdversarialArtifact],
    skips: Sequence[Skip] = (),
) -> None:
    """One JSONL row per input example: full artifacts, or skip provenance."""
    with open(path, "w", encoding="utf-8") as fh:
        for artifact in artifacts:
            row = {
                "example_id": artifact.example_id,
                "answer_sentence": artifact.answer_sentence,
                "entities": [
                    {"surface": m.surface, "label": m.label, "start": m.start, "end": m.end}
                    for m in artifact.entities
                ],
                "adversarial_sentence": artifact.adversarial_sentence,
                "adversarial_passage": artifact.adversarial_passage,
                "sentence_similarity": artifact.sentence_similarity,
                "attempts": artifact.attempts,
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


def read_adversarial_sidecar(path) -> tuple[dict[str, AdversarialArtifact], list[Skip]]:
    artifacts: dict[str, AdversarialArtifact] = {}
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
            artifacts[row["example_id"]] = AdversarialArtifact(
                example_id=row["example_id"],
                answer_sentence=row["answer_sentence"],
                entities=[
                    EntityMention(
                        surface=e["surface"], label=e["label"], start=e["start"], end=e["end"]
                    )
                    for e in row["entities"]
                ],
                adversarial_sentence=row["adversarial_sentence"],
                adversarial_passage=row["adversarial_passage"],
                sentence_similarity=float(row["sentence_similarity"]),
                attempts=int(row["attempts"]),
                filter_trace=[tuple(entry) for entry in row.get("filter_trace", [])],
            )
    return artifacts, skips

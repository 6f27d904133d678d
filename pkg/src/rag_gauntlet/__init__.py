"""Robustness evaluation harness for retrieval-augmented QA.

Labels answerability, synthesizes adversarial and conflicting documents,
runs models under fixed prompt regimes, and scores accuracy, robustness
under an added document, hallucination, conflict detection, and answer
stubbornness.
"""

from .corpus import (
    AnswerabilityLabel,
    DatasetStats,
    Document,
    DocumentOrigin,
    QAExample,
    dataset_stats,
    insert_document,
    label_answerability,
    load_dataset,
    load_perturbed_dataset,
    pick_random_document,
    pick_rank_k_plus_one,
    relabel_unanswerable_gold,
    write_dataset,
)
from .textmetrics import (
    ScoreTriple,
    StubbornOutcome,
    UnansOutcome,
    aggregate,
    classify_stubborn_outcome,
    classify_unans_outcome,
    detect_conflict_response,
    exact_match,
    f1,
    is_correct,
    normalize,
)
from .scenarios import (
    Attack,
    GenerationRecord,
    PromptKind,
    build_prompt,
    compute_ara,
    compute_par,
    eval_adv_unans,
    eval_baseline,
    eval_conflict_detection,
    eval_rad,
    eval_stubbornness,
    eval_unanswerable,
    run_generation,
)

__version__ = "0.1.0"

__all__ = [
    "AnswerabilityLabel",
    "Attack",
    "DatasetStats",
    "Document",
    "DocumentOrigin",
    "GenerationRecord",
    "PromptKind",
    "QAExample",
    "ScoreTriple",
    "StubbornOutcome",
    "UnansOutcome",
    "aggregate",
    "build_prompt",
    "classify_stubborn_outcome",
    "classify_unans_outcome",
    "compute_ara",
    "compute_par",
    "dataset_stats",
    "detect_conflict_response",
    "eval_adv_unans",
    "eval_baseline",
    "eval_conflict_detection",
    "eval_rad",
    "eval_stubbornness",
    "eval_unanswerable",
    "exact_match",
    "f1",
    "insert_document",
    "is_correct",
    "label_answerability",
    "load_dataset",
    "load_perturbed_dataset",
    "normalize",
    "pick_random_document",
    "pick_rank_k_plus_one",
    "relabel_unanswerable_gold",
    "run_generation",
    "write_dataset",
]

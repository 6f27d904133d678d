"""Text normalization, answer-correctness metrics, and response outcome taxonomies."""

from __future__ import annotations

import string
import unicodedata
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

_ARTICLES = frozenset({"a", "an", "the"})


class UnansOutcome(Enum):
    """Classification of a response to an example whose documents lack the answer."""

    ACC_UNANS = "acc_unans"
    CORRECT = "cor"
    HALLUCINATION = "hallu"


class StubbornOutcome(Enum):
    """How an originally-correct answer changed once a conflicting document was added."""

    A_TO_A = "a_to_a"
    A_TO_C = "a_to_c"
    A_TO_U = "a_to_u"


@dataclass(frozen=True)
class ScoreTriple:
    """Substring accuracy, exact match, and token F1, each averaged into [0, 1]."""

    acc: float
    em: float
    f1: float

    def __post_init__(self) -> None:
        for name in ("acc", "em", "f1"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of range: {value}")
        if self.em > self.acc + 1e-9:
            raise ValueError("em cannot exceed acc")
        if self.em > self.f1 + 1e-9:
            raise ValueError("em cannot exceed f1")


def normalize(text: str) -> str:
    """Normalize text for answer matching.

    Lowercases, strips diacritics (NFKD), replaces punctuation with spaces,
    drops the articles a/an/the as whole tokens, and collapses whitespace.
    """
    decomposed = unicodedata.normalize("NFKD", text)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    lowered = stripped.lower()
    spaced = "".join(
        " " if ch in string.punctuation or unicodedata.category(ch).startswith("P") else ch
        for ch in lowered
    )
    tokens = [tok for tok in spaced.split() if tok not in _ARTICLES]
    return " ".join(tokens)


def contains_token(text: str, token: str) -> bool:
    """True when `token` appears as a whole token of the normalized text."""
    return token in normalize(text).split()


def is_correct(prediction: str, answers: Sequence[str]) -> bool:
    """True when some normalized answer is a substring of the normalized prediction."""
    if not answers:
        raise ValueError("answers must be non-empty")
    norm_pred = normalize(prediction)
    return any(normalize(answer) in norm_pred for answer in answers)


def exact_match(prediction: str, answers: Sequence[str]) -> bool:
    """True when the normalized prediction equals some normalized answer."""
    if not answers:
        raise ValueError("answers must be non-empty")
    norm_pred = normalize(prediction)
    return any(normalize(answer) == norm_pred for answer in answers)


def _token_f1(pred_tokens: list[str], ans_tokens: list[str]) -> float:
    if not pred_tokens and not ans_tokens:
        return 1.0
    if not pred_tokens or not ans_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(ans_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ans_tokens)
    return 2 * precision * recall / (precision + recall)


def f1(prediction: str, answers: Sequence[str]) -> float:
    """Max token-level F1 between the prediction and any answer, with multiplicity."""
    if not answers:
        raise ValueError("answers must be non-empty")
    pred_tokens = normalize(prediction).split()
    return max(_token_f1(pred_tokens, normalize(answer).split()) for answer in answers)


def classify_unans_outcome(prediction: str, original_answers: Sequence[str]) -> UnansOutcome:
    """Bucket a response to an unanswerable example.

    Precedence: declaring unanswerability wins over restating the original
    answer, since that is exactly what the instruction asked for.
    """
    if contains_token(prediction, "unanswerable"):
        return UnansOutcome.ACC_UNANS
    if is_correct(prediction, original_answers):
        return UnansOutcome.CORRECT
    return UnansOutcome.HALLUCINATION


def detect_conflict_response(prediction: str) -> bool:
    """True when the response flags conflicting documents."""
    return contains_token(prediction, "conflict")


def classify_stubborn_outcome(
    prediction: str, original_answers: Sequence[str], conflict_answer: str
) -> StubbornOutcome:
    """Bucket a response after a conflicting document was injected.

    Precedence: keeping the original answer wins over echoing the conflict
    answer when both appear in the response.
    """
    if is_correct(prediction, original_answers):
        return StubbornOutcome.A_TO_A
    if normalize(conflict_answer) in normalize(prediction):
        return StubbornOutcome.A_TO_C
    return StubbornOutcome.A_TO_U


def aggregate(outcomes: Sequence[Enum]) -> dict[Enum, float]:
    """Percentage per outcome variant, over all variants of the outcome's enum.

    Values are unrounded; renderers round to two decimals. After rounding the
    percentages sum to 100 within 0.02.
    """
    if not outcomes:
        raise ValueError("cannot aggregate an empty outcome list")
    enum_type = type(outcomes[0])
    counts = Counter(outcomes)
    total = len(outcomes)
    return {variant: 100.0 * counts.get(variant, 0) / total for variant in enum_type}

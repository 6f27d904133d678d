"""Metric and taxonomy tests, including property-based invariants."""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rag_gauntlet.textmetrics import (
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


class TestNormalize:
    def test_articles_punctuation_case(self):
        assert normalize("The Burj Khalifa.") == "burj khalifa"

    def test_diacritics(self):
        assert normalize("Röntgen") == "rontgen"

    def test_numbers_unchanged(self):
        assert normalize("14") == "14"

    def test_unicode_punctuation(self):
        assert normalize("“naïve” – answer") == "naive answer"

    def test_whitespace_collapse(self):
        assert normalize("  a   the\tоб ") == "об"


class TestIsCorrect:
    def test_substring_hit(self):
        assert is_correct("It is the Burj Khalifa", ["Burj Khalifa"])

    def test_wrong_city(self):
        assert not is_correct("Cincinnati", ["Cleveland"])

    def test_unanswerable_identity(self):
        assert is_correct("unanswerable", ["unanswerable"])

    def test_empty_answers_rejected(self):
        with pytest.raises(ValueError):
            is_correct("x", [])


class TestExactMatch:
    def test_normalization_collapse(self):
        assert exact_match("burj khalifa", ["The Burj Khalifa"])

    def test_contrast_with_substring(self):
        prediction = "the answer is burj khalifa"
        assert not exact_match(prediction, ["Burj Khalifa"])
        assert is_correct(prediction, ["Burj Khalifa"])

    def test_empty_prediction(self):
        assert not exact_match("", ["Burj Khalifa"])


class TestF1:
    def test_partial_overlap(self):
        assert f1("burj khalifa tower", ["burj khalifa"]) == pytest.approx(0.8, abs=1e-9)

    def test_identity(self):
        assert f1("burj khalifa", ["Burj Khalifa"]) == 1.0

    def test_disjoint(self):
        assert f1("red green", ["blue"]) == 0.0

    def test_multiplicity(self):
        # one shared "x" out of pred (x, x) and answer (x, y)
        assert f1("x x", ["x y"]) == pytest.approx(0.5, abs=1e-9)


class TestTaxonomies:
    def test_acc_unans(self):
        assert classify_unans_outcome("unanswerable", ["Wilhelm Conrad Röntgen"]) is UnansOutcome.ACC_UNANS

    def test_hallucination(self):
        assert (
            classify_unans_outcome("Yuval Katzenelson", ["Wilhelm Conrad Röntgen"])
            is UnansOutcome.HALLUCINATION
        )

    def test_correct(self):
        assert (
            classify_unans_outcome("Wilhelm Conrad Röntgen", ["Wilhelm Conrad Röntgen"])
            is UnansOutcome.CORRECT
        )

    def test_precedence_dual_hit(self):
        response = "unanswerable, though some say Wilhelm Conrad Röntgen"
        assert classify_unans_outcome(response, ["Wilhelm Conrad Röntgen"]) is UnansOutcome.ACC_UNANS

    def test_conflict_detection(self):
        assert detect_conflict_response("conflict")
        assert detect_conflict_response("Conflict.")
        assert not detect_conflict_response("Burj Khalifa")
        assert not detect_conflict_response("conflicting")

    def test_stubborn_kept(self):
        assert classify_stubborn_outcome("14", ["14"], "15") is StubbornOutcome.A_TO_A

    def test_stubborn_flipped(self):
        assert classify_stubborn_outcome("15", ["14"], "15") is StubbornOutcome.A_TO_C

    def test_stubborn_uncertain(self):
        assert classify_stubborn_outcome("I cannot tell", ["14"], "15") is StubbornOutcome.A_TO_U

    def test_stubborn_precedence_dual_hit(self):
        assert classify_stubborn_outcome("either 14 or 15", ["14"], "15") is StubbornOutcome.A_TO_A


class TestAggregate:
    def test_counting(self):
        outcomes = [
            StubbornOutcome.A_TO_A,
            StubbornOutcome.A_TO_A,
            StubbornOutcome.A_TO_C,
            StubbornOutcome.A_TO_U,
        ]
        assert aggregate(outcomes) == {
            StubbornOutcome.A_TO_A: 50.0,
            StubbornOutcome.A_TO_C: 25.0,
            StubbornOutcome.A_TO_U: 25.0,
        }

    def test_boundary_all_one_variant(self):
        shares = aggregate([UnansOutcome.ACC_UNANS] * 7)
        assert shares == {
            UnansOutcome.ACC_UNANS: 100.0,
            UnansOutcome.CORRECT: 0.0,
            UnansOutcome.HALLUCINATION: 0.0,
        }

    def test_published_partition_shape(self):
        # 68.34 / 25.61 / 6.05 sums to 100.00
        outcomes = (
            [StubbornOutcome.A_TO_A] * 6834
            + [StubbornOutcome.A_TO_C] * 2561
            + [StubbornOutcome.A_TO_U] * 605
        )
        shares = aggregate(outcomes)
        assert shares[StubbornOutcome.A_TO_A] == pytest.approx(68.34, abs=1e-9)
        rounded = sum(round(v, 2) for v in shares.values())
        assert abs(rounded - 100.0) <= 0.02

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate([])


class TestScoreTriple:
    def test_em_cannot_exceed_acc(self):
        with pytest.raises(ValueError):
            ScoreTriple(acc=0.1, em=0.5, f1=0.6)

    def test_range_enforced(self):
        with pytest.raises(ValueError):
            ScoreTriple(acc=1.2, em=0.0, f1=0.0)


_WORDS = st.text(alphabet="abcdefgz0189", min_size=1, max_size=6)
_PHRASES = st.lists(_WORDS, min_size=1, max_size=5).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(prediction=_PHRASES, answers=st.lists(_PHRASES, min_size=1, max_size=3))
def test_exact_match_implies_correct_and_full_f1(prediction, answers):
    if exact_match(prediction, answers):
        assert is_correct(prediction, answers)
        assert f1(prediction, answers) == 1.0
    assert f1(prediction, answers) >= float(exact_match(prediction, answers))


@settings(max_examples=60, deadline=None)
@given(prediction=_PHRASES, answers=st.lists(_PHRASES, min_size=1, max_size=3))
def test_is_correct_invariant_under_decoration(prediction, answers):
    decorated = "The " + prediction.upper() + "!!!"
    assert is_correct(decorated, answers) == is_correct(prediction, answers)


@settings(max_examples=60, deadline=None)
@given(a=_PHRASES, b=_PHRASES)
def test_f1_symmetry_and_equality_condition(a, b):
    assert f1(a, [b]) == pytest.approx(f1(b, [a]), abs=1e-12)
    if f1(a, [b]) == 1.0:
        assert sorted(normalize(a).split()) == sorted(normalize(b).split())


@settings(max_examples=40, deadline=None)
@given(
    counts=st.tuples(
        st.integers(min_value=0, max_value=50),
        st.integers(min_value=0, max_value=50),
        st.integers(min_value=0, max_value=50),
    ).filter(lambda c: sum(c) > 0)
)
def test_aggregate_sums_to_100(counts):
    outcomes = (
        [UnansOutcome.ACC_UNANS] * counts[0]
        + [UnansOutcome.CORRECT] * counts[1]
        + [UnansOutcome.HALLUCINATION] * counts[2]
    )
    shares = aggregate(outcomes)
    assert abs(sum(round(v, 2) for v in shares.values()) - 100.0) <= 0.02


def test_contains_token_is_whole_token():
    assert contains_token("It was Unanswerable!", "unanswerable")
    assert not contains_token("unanswerableness", "unanswerable")

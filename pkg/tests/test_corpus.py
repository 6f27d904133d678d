"""Dataset ingestion, labeling, and insertion tests."""

from __future__ import annotations

import json

import pytest

from rag_gauntlet.corpus import (
    DatasetLoadError,
    DocumentOrigin,
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

from conftest import make_doc, make_example


def _row(example_id="q1", question="Who?", answers=("Ann",), n_ctxs=5):
    return {
        "id": example_id,
        "question": question,
        "answers": list(answers),
        "ctxs": [
            {"id": f"{example_id}-c{i}", "title": f"t{i}", "text": f"body {i}", "score": 9.0 - i}
            for i in range(n_ctxs)
        ],
    }


def _write(tmp_path, rows, name="data.jsonl"):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


class TestLoadDataset:
    def test_direct_mapping(self, tmp_path):
        path = _write(tmp_path, [_row(n_ctxs=5)])
        (example,) = load_dataset(path, k=5)
        assert [d.rank for d in example.documents] == [1, 2, 3, 4, 5]
        assert all(d.origin is DocumentOrigin.RETRIEVED for d in example.documents)
        assert example.reserve_documents == []

    def test_truncation_keeps_file_order(self, tmp_path):
        path = _write(tmp_path, [_row(n_ctxs=20)])
        (example,) = load_dataset(path, k=5)
        assert [d.doc_id for d in example.documents] == [f"q1-c{i}" for i in range(5)]
        assert len(example.reserve_documents) == 15
        assert example.reserve_documents[0].rank == 6

    def test_missing_answers_names_line(self, tmp_path):
        row = _row()
        del row["answers"]
        path = _write(tmp_path, [_row("q0"), row])
        with pytest.raises(DatasetLoadError, match="line 2"):
            load_dataset(path, k=5)

    def test_invalid_json_names_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text(json.dumps(_row()) + "\n{not json\n", encoding="utf-8")
        with pytest.raises(DatasetLoadError, match="line 2"):
            load_dataset(path, k=5)

    def test_duplicate_id(self, tmp_path):
        path = _write(tmp_path, [_row("dup"), _row("dup")])
        with pytest.raises(DatasetLoadError, match="duplicate"):
            load_dataset(path, k=5)

    def test_zero_contexts(self, tmp_path):
        row = _row()
        row["ctxs"] = []
        path = _write(tmp_path, [row])
        with pytest.raises(DatasetLoadError):
            load_dataset(path, k=5)

    def test_answer_empty_after_normalization(self, tmp_path):
        path = _write(tmp_path, [_row(answers=("the",))])
        with pytest.raises(DatasetLoadError, match="normalization"):
            load_dataset(path, k=5)

    def test_order_stable_across_loads(self, tmp_path):
        path = _write(tmp_path, [_row(f"q{i}") for i in range(10)])
        assert load_dataset(path, k=3) == load_dataset(path, k=3)

    def test_k_must_be_positive(self, tmp_path):
        path = _write(tmp_path, [_row()])
        with pytest.raises(ValueError):
            load_dataset(path, k=0)


class TestLabelAnswerability:
    def test_direct_containment(self):
        example = make_example(
            answers=["Burj Khalifa"],
            doc_texts=["...the tallest building in the world is Burj Khalifa..."],
        )
        label = label_answerability(example)
        assert label.answerable and label.hit_mask == (True,)

    def test_opec_number(self):
        example = make_example(answers=["14"], doc_texts=["OPEC consists of 14 countries"])
        assert label_answerability(example).answerable

    def test_adversarial_docs_unanswerable(self):
        example = make_example(
            answers=["Wilhelm Conrad Röntgen"],
            doc_texts=[
                "In 2012, the first prize winner was another Israeli teenager, Yuval "
                "Katzenelson of Kiryat Gat, who presented...",
                "... three names on the list: Werner Heisenberg, who received the Nobel "
                "Prize in Physics in 1932...",
            ],
        )
        label = label_answerability(example)
        assert not label.answerable and label.hit_mask == (False, False)

    def test_title_counts(self):
        example = make_example(answers=["Ada Lovelace"], doc_texts=["nothing relevant"])
        example.documents[0] = make_doc("d1", "nothing relevant", title="Ada Lovelace biography")
        assert label_answerability(example).answerable

    def test_per_document_mask(self):
        example = make_example(
            answers=["42"], doc_texts=["it is 42 here", "nothing", "42 again"]
        )
        assert label_answerability(example).hit_mask == (True, False, True)

    def test_requires_documents(self):
        example = make_example()
        example.documents = []
        with pytest.raises(ValueError):
            label_answerability(example)


class TestRelabel:
    def test_unanswerable_relabeled(self):
        example = make_example(answers=["Wilhelm Conrad Röntgen"], doc_texts=["unrelated text"])
        label = label_answerability(example)
        relabeled = relabel_unanswerable_gold(example, label)
        assert relabeled.answers == ["unanswerable"]
        assert relabeled.original_answers == ["Wilhelm Conrad Röntgen"]

    def test_answerable_untouched(self):
        example = make_example()
        label = label_answerability(example)
        assert relabel_unanswerable_gold(example, label) is example

    def test_idempotent(self):
        example = make_example(answers=["Röntgen"], doc_texts=["unrelated"])
        label = label_answerability(example)
        once = relabel_unanswerable_gold(example, label)
        twice = relabel_unanswerable_gold(once, label)
        assert once == twice


class TestDatasetStats:
    def test_counting(self):
        examples = [
            make_example("a", answers=["x1"], doc_texts=["x1 here"]),
            make_example("b", answers=["x2"], doc_texts=["x2 here"]),
            make_example("c", answers=["x3"], doc_texts=["nope"]),
            make_example("d", answers=["x4"], doc_texts=["nope"]),
        ]
        labels = [label_answerability(ex) for ex in examples]
        stats = dataset_stats(examples, labels)
        assert stats.size == 4
        assert stats.recall_at_k == 0.5
        assert stats.unans_fraction == 0.5

    def test_boundary_all_answerable(self):
        examples = [make_example("a", answers=["x"], doc_texts=["x y z"])]
        stats = dataset_stats(examples, [label_answerability(examples[0])])
        assert stats.recall_at_k == 1.0 and stats.unans_fraction == 0.0

    def test_complement_invariant(self):
        examples = [
            make_example(f"e{i}", answers=[f"w{i:02d}"], doc_texts=["w00 w01 w02"])
            for i in range(7)
        ]
        labels = [label_answerability(ex) for ex in examples]
        stats = dataset_stats(examples, labels)
        assert abs(stats.recall_at_k + stats.unans_fraction - 1.0) < 1e-9

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            dataset_stats([], [])

    def test_reference_magnitudes_are_complementary(self):
        # shape of a typical published dataset row: 3610 examples, 0.68 / 0.32
        assert abs(0.68 + 0.32 - 1.0) < 1e-9
        stats = dataset_stats(
            [make_example(f"r{i}", answers=["hit"], doc_texts=["hit" if i < 68 else "miss"]) for i in range(100)],
            [
                label_answerability(
                    make_example(f"r{i}", answers=["hit"], doc_texts=["hit" if i < 68 else "miss"])
                )
                for i in range(100)
            ],
        )
        assert stats.recall_at_k == pytest.approx(0.68)
        assert stats.unans_fraction == pytest.approx(0.32)


class TestInsertDocument:
    def _example(self):
        return make_example("exi", doc_texts=[f"doc {i}" for i in range(5)])

    def test_cardinality_and_position(self):
        example = self._example()
        doc = make_doc("adv1", "injected", origin=DocumentOrigin.GENADV)
        out = insert_document(example, doc, global_seed=7)
        assert len(out.documents) == 6
        assert out.injected is not None
        assert 0 <= out.injected.position <= 5
        assert out.documents[out.injected.position].doc_id == "adv1"
        assert out.documents[out.injected.position].rank == out.injected.position + 1

    def test_determinism(self):
        example = self._example()
        doc = make_doc("adv1", "injected", origin=DocumentOrigin.GENADV)
        first = insert_document(example, doc, global_seed=7)
        second = insert_document(example, doc, global_seed=7)
        assert first.injected == second.injected

    def test_original_order_preserved(self):
        example = self._example()
        doc = make_doc("adv1", "injected", origin=DocumentOrigin.RANDOM)
        out = insert_document(example, doc, global_seed=3)
        rest = [d for d in out.documents if d.doc_id != "adv1"]
        assert rest == list(example.documents)
        assert [d.rank for d in rest] == [1, 2, 3, 4, 5]

    def test_retrieved_rejected(self):
        example = self._example()
        with pytest.raises(ValueError):
            insert_document(example, make_doc("r", "x"), global_seed=1)


class TestPickRandomDocument:
    def test_no_eligible_donor(self):
        target = make_example("only")
        with pytest.raises(ValueError):
            pick_random_document([target], "only", global_seed=1)

    def test_forced_choice(self):
        target = make_example("t", doc_texts=["a"])
        donor = make_example("d", doc_texts=["donor doc"])
        doc = pick_random_document([target, donor], "t", global_seed=5)
        assert doc.origin is DocumentOrigin.RANDOM
        assert doc.text == "donor doc"
        assert doc.doc_id.startswith("random:d:")

    def test_determinism(self):
        pool = [make_example(f"e{i}", doc_texts=[f"d{i}-{j}" for j in range(5)]) for i in range(10)]
        first = pick_random_document(pool, "e0", global_seed=11)
        second = pick_random_document(pool, "e0", global_seed=11)
        assert first == second


class TestPickRankKPlusOne:
    def test_sixth_of_six(self):
        docs = [make_doc(f"c{i}", f"text {i}", rank=i + 1) for i in range(6)]
        doc = pick_rank_k_plus_one(docs, k=5)
        assert doc is not None
        assert doc.doc_id == "c5"
        assert doc.origin is DocumentOrigin.TOPK_EXTRA

    def test_exactly_k_contexts_skips(self):
        docs = [make_doc(f"c{i}", f"text {i}", rank=i + 1) for i in range(5)]
        assert pick_rank_k_plus_one(docs, k=5) is None

    def test_sixth_not_last(self):
        docs = [make_doc(f"c{i}", f"text {i}", rank=i + 1) for i in range(10)]
        doc = pick_rank_k_plus_one(docs, k=5)
        assert doc is not None and doc.doc_id == "c5"


class TestPerturbedRoundTrip:
    def test_write_then_load(self, tmp_path):
        example = make_example("rt", doc_texts=[f"doc {i}" for i in range(5)])
        injected = insert_document(
            example, make_doc("adv", "synthetic passage", title="claim", origin=DocumentOrigin.GENADV), 9
        )
        path = tmp_path / "perturbed.jsonl"
        write_dataset([injected], path)
        (loaded,) = load_perturbed_dataset(path)
        assert loaded.injected == injected.injected
        assert len(loaded.documents) == 6
        assert loaded.documents[injected.injected.position].origin is DocumentOrigin.GENADV
        assert [d.text for d in loaded.documents] == [d.text for d in injected.documents]

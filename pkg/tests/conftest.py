"""Shared test doubles and fixture builders."""

from __future__ import annotations

import hashlib
import json
import re
import struct
from pathlib import Path
from typing import Callable, Mapping, Sequence

import pytest

from rag_gauntlet.corpus import Document, DocumentOrigin, QAExample
from rag_gauntlet.services import (
    ChatClient,
    ChatRequest,
    EmbeddingClient,
    EntityMention,
    NerClient,
    ResponseCache,
    Services,
)


class FunctionChatBackend:
    """Chat backend driven by a plain function of the request."""

    def __init__(self, fn: Callable[[ChatRequest], str]):
        self.fn = fn
        self.calls = 0

    def complete(self, request: ChatRequest) -> str:
        self.calls += 1
        return self.fn(request)


def hash_vector(text: str, dim: int = 16) -> list[float]:
    """Deterministic pseudo-random unit-ish vector for a string."""
    values: list[float] = []
    counter = 0
    while len(values) < dim:
        digest = hashlib.sha256(f"{counter}:{text}".encode("utf-8")).digest()
        for i in range(0, len(digest) - 7, 8):
            (raw,) = struct.unpack(">q", digest[i : i + 8])
            values.append(raw / float(1 << 63))
            if len(values) == dim:
                break
        counter += 1
    if all(v == 0.0 for v in values):
        values[0] = 1.0
    return values


class StaticEmbeddingBackend:
    """Embeddings from a fixed table, falling back to hashed vectors."""

    def __init__(self, table: Mapping[str, Sequence[float]] | None = None, dim: int = 16):
        self.table = dict(table or {})
        self.dim = dim
        self.calls = 0

    def embed(self, texts: Sequence[str], model_id: str) -> list[list[float]]:
        self.calls += 1
        out = []
        for text in texts:
            if text in self.table:
                out.append([float(v) for v in self.table[text]])
            else:
                out.append(hash_vector(text, self.dim))
        return out


class StaticNerBackend:
    """NER from a fixed mapping text -> mention tuples (surface, label)."""

    cache_tag = "test:static"

    def __init__(self, table: Mapping[str, Sequence[tuple[str, str]]]):
        self.table = dict(table)
        self.calls = 0

    def extract(self, text: str) -> list[EntityMention]:
        self.calls += 1
        mentions = []
        cursor = 0
        for surface, label in self.table.get(text, ()):
            start = text.find(surface, cursor)
            if start < 0:
                raise AssertionError(f"fixture surface {surface!r} not in text {text!r}")
            mentions.append(EntityMention(surface=surface, label=label, start=start, end=start + len(surface)))
            cursor = start + len(surface)
        return mentions


class RegexNerBackend:
    """Pattern-based tagger for synthetic fixtures."""

    cache_tag = "test:regex"

    _PATTERNS = (
        (re.compile(r"\b[A-Z][a-z]+(?: [A-Z][a-z]+\d*)+"), "MISC"),
        (re.compile(r"\bcodeword\d+\b"), "CODE"),
        (re.compile(r"\bpasskey\d+\b"), "CODE"),
        (re.compile(r"\b\d+\b"), "CARDINAL"),
    )

    def extract(self, text: str) -> list[EntityMention]:
        spans: list[tuple[int, int, str]] = []
        for pattern, label in self._PATTERNS:
            for match in pattern.finditer(text):
                spans.append((match.start(), match.end(), label))
        spans.sort(key=lambda s: (s[0], -s[1]))
        mentions = []
        prev_end = 0
        for start, end, label in spans:
            if start >= prev_end:
                mentions.append(
                    EntityMention(surface=text[start:end], label=label, start=start, end=end)
                )
                prev_end = end
        return mentions


def make_services(
    chat_fn: Callable[[ChatRequest], str],
    *,
    embed_table: Mapping[str, Sequence[float]] | None = None,
    ner_backend=None,
    cache: ResponseCache | None = None,
    chat_model: str = "test-chat",
    embed_model: str = "test-embed",
) -> Services:
    chat_backend = FunctionChatBackend(chat_fn)
    embed_backend = StaticEmbeddingBackend(embed_table)
    ner = ner_backend if ner_backend is not None else RegexNerBackend()
    return Services(
        chat=ChatClient(chat_backend, cache=cache, sleeper=lambda _s: None),
        chat_model=chat_model,
        embedder=EmbeddingClient(embed_backend, cache=cache, sleeper=lambda _s: None),
        embed_model=embed_model,
        ner=NerClient(ner, cache=cache, sleeper=lambda _s: None),
    )


def make_doc(
    doc_id: str,
    text: str,
    title: str = "t",
    rank: int = 1,
    origin: DocumentOrigin = DocumentOrigin.RETRIEVED,
) -> Document:
    return Document(doc_id=doc_id, title=title, text=text, rank=rank, origin=origin)


def make_example(
    example_id: str = "ex1",
    question: str = "What is the tallest building in the world?",
    answers: Sequence[str] = ("Burj Khalifa",),
    doc_texts: Sequence[str] = ("The tallest building in the world is Burj Khalifa.",),
) -> QAExample:
    docs = [
        make_doc(f"{example_id}-d{i}", text, title=f"title {i}", rank=i)
        for i, text in enumerate(doc_texts, start=1)
    ]
    return QAExample(id=example_id, question=question, answers=list(answers), documents=docs)


def fixture_rows(n: int = 200, k: int = 5) -> list[dict]:
    """Synthetic retrieval-results rows: even ids answerable, odd unanswerable.

    Answers use fixed-width numbering so no answer is a substring of another.
    Document 1 always carries a capitalized multiword decoy for the parrot mock,
    and two reserve contexts beyond k keep the rank-(k+1) baseline applicable.
    """
    rows = []
    for i in range(n):
        answer = f"codeword{i:04d}"
        question = f"What is the access code for Project Aurora{i:04d}?"
        ctxs = []
        for j in range(k + 2):
            text = (
                f"Survey notes describe the Crystal Harbor region and routine "
                f"measurements logged in sector {j} of the archive."
            )
            if i % 2 == 0 and j == i % k:
                text = f"The access code for Project Aurora{i:04d} is {answer}."
            ctxs.append(
                {
                    "id": f"doc-{i:04d}-{j}",
                    "title": f"Field Ledger {i:04d}-{j}",
                    "text": text,
                    "score": float(k + 2 - j),
                }
            )
        rows.append(
            {"id": f"ex{i:04d}", "question": question, "answers": [answer], "ctxs": ctxs}
        )
    return rows


def write_fixture_dataset(path: Path, n: int = 200, k: int = 5) -> Path:
    with open(path, "w", encoding="utf-8") as fh:
        for row in fixture_rows(n, k):
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")
    return path


@pytest.fixture
def fixture_dataset(tmp_path: Path) -> Path:
    return write_fixture_dataset(tmp_path / "fixture.jsonl", n=40, k=5)


def genadv_chat_fn(request: ChatRequest) -> str:
    """Scripted generator for the synthetic fixture's synthesis prompts."""
    prompt = request.messages[-1][1]
    if prompt.startswith("Please write a single sentence"):
        question = re.search(r"\nQuestion: (.*)\n", prompt).group(1)
        answer = re.search(r"\nAnswer: (.*)\n", prompt).group(1)
        project = re.search(r"Project Aurora\d+", question)
        subject = project.group(0) if project else "the project"
        return f"{answer} is the access code for {subject}."
    if prompt.startswith("Rewrite the sentence"):
        original = re.search(r"\nOriginal sentence: (.*)\n", prompt).group(1)
        number = re.search(r"codeword(\d+)", original)
        tag = number.group(1) if number else "0000"
        return f"passkey{tag} is the access code for Project Borealis{tag}."
    if prompt.startswith("Given a claim"):
        claim = re.search(r"\nClaim: (.*)\n", prompt).group(1)
        filler = (
            "Archive records kept by the survey office confirm the assignment and "
            "describe the issuing process, the review board, the storage vault, and "
            "the distribution schedule maintained for regional staff over many years."
        )
        return f"{claim} {filler}"
    raise AssertionError(f"unexpected generation prompt: {prompt[:80]}")

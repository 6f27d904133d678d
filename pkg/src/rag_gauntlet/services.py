"""Clients for chat generation, embeddings, and NER with on-disk response caching.

All three clients share the same conventions: requests are canonicalized to a
JSON payload, hashed into a content-addressed cache, and retried with
exponential backoff on transient transport failures. Evaluation traffic is
forced to temperature 0 at the request boundary.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import tempfile
import time
import random as _random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Protocol, Sequence

import httpx
import numpy as np

logger = logging.getLogger(__name__)

EVAL_MAX_TOKENS = 100
GENERATION_MAX_TOKENS = 256


class ServiceError(Exception):
    """Base class for service-layer failures."""


class TransientServiceError(ServiceError):
    """Transport failure or retryable provider status (429, 5xx)."""


class ProviderError(ServiceError):
    """Non-retryable provider failure; carries the provider's message."""


class RetryExhaustedError(ServiceError):
    """All retries failed; `attempts` holds one log line per attempt."""

    def __init__(self, message: str, attempts: list[str]):
        super().__init__(message)
        self.attempts = attempts


class Purpose(Enum):
    EVALUATION = "evaluation"
    GENERATION = "generation"


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    messages: tuple[tuple[str, str], ...]
    purpose: Purpose
    temperature: float | None = None
    max_tokens: int = EVAL_MAX_TOKENS
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.purpose is Purpose.EVALUATION and self.temperature != 0:
            raise ValueError("evaluation requests must use temperature 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be positive")
        for role, _content in self.messages:
            if role not in ("system", "user"):
                raise ValueError(f"unsupported message role {role!r}")

    def canonical_payload(self) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "kind": "chat",
            "model": self.model_id,
            "messages": [{"role": role, "content": content} for role, content in self.messages],
            "max_tokens": self.max_tokens,
        }
        if self.temperature is not None:
            payload["temperature"] = self.temperature
        if self.seed is not None:
            payload["seed"] = self.seed
        return payload


def evaluation_request(model_id: str, prompt: str, max_tokens: int = EVAL_MAX_TOKENS) -> ChatRequest:
    """Greedy-decoded request for scoring runs."""
    return ChatRequest(
        model_id=model_id,
        messages=(("user", prompt),),
        purpose=Purpose.EVALUATION,
        temperature=0.0,
        max_tokens=max_tokens,
    )


def generation_request(
    model_id: str, prompt: str, seed: int | None = None, max_tokens: int = GENERATION_MAX_TOKENS
) -> ChatRequest:
    """Provider-default sampling request for synthesis steps; `seed` varies retries."""
    return ChatRequest(
        model_id=model_id,
        messages=(("user", prompt),),
        purpose=Purpose.GENERATION,
        max_tokens=max_tokens,
        seed=seed,
    )


@dataclass(frozen=True)
class ChatResponse:
    content: str  # provider content verbatim, never trimmed
    cached: bool
    latency_ms: int


@dataclass(frozen=True)
class EmbeddingVector:
    values: tuple[float, ...]
    model_id: str

    def __post_init__(self) -> None:
        if not self.values:
            raise ValueError("embedding vector is empty")
        if all(v == 0.0 for v in self.values):
            raise ValueError("embedding vector is all-zero")


@dataclass(frozen=True)
class EntityMention:
    surface: str
    label: str
    start: int
    end: int

    def __post_init__(self) -> None:
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid span [{self.start}, {self.end})")


def canonical_json(payload: Any) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


class ResponseCache:
    """Content-addressed JSON cache, safe for concurrent writers.

    Each entry is a file named by the SHA-256 of the canonical request payload
    and published atomically via write-temp-then-rename.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def key_for(self, payload: Any) -> str:
        return hashlib.sha256(canonical_json(payload).encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, payload: Any) -> Any | None:
        path = self._path(self.key_for(payload))
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)["response"]
        except (FileNotFoundError, json.JSONDecodeError, KeyError):
            return None

    def put(self, payload: Any, response: Any) -> None:
        path = self._path(self.key_for(payload))
        path.parent.mkdir(parents=True, exist_ok=True)
        entry = {
            "request": payload,
            "response": response,
            "created_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        }
        fd, tmp_name = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(entry, fh, ensure_ascii=False)
            os.replace(tmp_name, path)
        except BaseException:
            if os.path.exists(tmp_name):
                os.unlink(tmp_name)
            raise


@dataclass(frozen=True)
class RetryPolicy:
    retries: int = 3
    base_delay: float = 1.0
    jitter: float = 0.2

    def delay(self, attempt: int) -> float:
        base = self.base_delay * (2**attempt)
        return base * (1.0 + _random.uniform(-self.jitter, self.jitter))


def call_with_retry(
    fn: Callable[[], Any],
    retry: RetryPolicy,
    sleeper: Callable[[float], None] = time.sleep,
    describe: str = "request",
) -> Any:
    attempts: list[str] = []
    for attempt in range(retry.retries + 1):
        try:
            return fn()
        except TransientServiceError as exc:
            attempts.append(f"attempt {attempt + 1}: {exc}")
            if attempt == retry.retries:
                raise RetryExhaustedError(
                    f"{describe} failed after {len(attempts)} attempts: {exc}", attempts
                ) from exc
            delay = retry.delay(attempt)
            logger.warning("%s failed (attempt %d), retrying in %.1fs: %s", describe, attempt + 1, delay, exc)
            sleeper(delay)
    raise AssertionError("unreachable")


def _provider_message(response: httpx.Response) -> str:
    try:
        data = response.json()
        if isinstance(data, dict):
            err = data.get("error")
            if isinstance(err, dict) and "message" in err:
                return str(err["message"])
            if isinstance(err, str):
                return err
    except ValueError:
        pass
    return response.text[:500]


def _post_json(client: httpx.Client, url: str, body: dict, headers: dict[str, str]) -> dict:
    try:
        response = client.post(url, json=body, headers=headers)
    except httpx.HTTPError as exc:
        raise TransientServiceError(f"transport error: {exc}") from exc
    if response.status_code == 429 or response.status_code >= 500:
        raise TransientServiceError(f"status {response.status_code}: {_provider_message(response)}")
    if response.status_code >= 400:
        raise ProviderError(f"status {response.status_code}: {_provider_message(response)}")
    try:
        return response.json()
    except ValueError as exc:
        raise ProviderError(f"non-JSON response: {response.text[:200]}") from exc


class ChatBackend(Protocol):
    def complete(self, request: ChatRequest) -> str: ...


class HttpChatBackend:
    """OpenAI-style chat completions endpoint: POST {base_url}/chat/completions."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        return {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}

    def complete(self, request: ChatRequest) -> str:
        body: dict[str, Any] = {
            "model": request.model_id,
            "messages": [{"role": role, "content": content} for role, content in request.messages],
            "max_tokens": request.max_tokens,
        }
        if request.temperature is not None:
            body["temperature"] = request.temperature
        if request.seed is not None:
            body["seed"] = request.seed
        data = _post_json(self._client, f"{self.base_url}/chat/completions", body, self._headers())
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"malformed chat response: {data!r}") from exc
        return str(content) if content is not None else ""


class ChatClient:
    """Caching, retrying front end over a chat backend."""

    def __init__(
        self,
        backend: ChatBackend,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.sleeper = sleeper

    def generate(self, request: ChatRequest) -> ChatResponse:
        payload = request.canonical_payload()
        if self.cache is not None:
            hit = self.cache.get(payload)
            if hit is not None:
                return ChatResponse(content=hit["content"], cached=True, latency_ms=0)
        started = time.monotonic()
        content = call_with_retry(
            lambda: self.backend.complete(request),
            self.retry,
            self.sleeper,
            describe=f"chat({request.model_id})",
        )
        latency_ms = int((time.monotonic() - started) * 1000)
        if self.cache is not None:
            self.cache.put(payload, {"content": content})
        return ChatResponse(content=content, cached=False, latency_ms=latency_ms)


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str], model_id: str) -> list[list[float]]: ...


class HttpEmbeddingBackend:
    """OpenAI-style embeddings endpoint: POST {base_url}/embeddings."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        timeout: float = 120.0,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: Sequence[str], model_id: str) -> list[list[float]]:
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        body = {"model": model_id, "input": list(texts)}
        data = _post_json(self._client, f"{self.base_url}/embeddings", body, headers)
        try:
            rows = sorted(data["data"], key=lambda row: row.get("index", 0))
            vectors = [[float(v) for v in row["embedding"]] for row in rows]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed embedding response: {data!r}") from exc
        if len(vectors) != len(texts):
            raise ProviderError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors


class EmbeddingClient:
    """Caching embedding front end; entries are cached per input text."""

    def __init__(
        self,
        backend: EmbeddingBackend,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        batch_size: int = 128,
    ):
        self.backend = backend
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.sleeper = sleeper
        self.batch_size = batch_size

    def embed_texts(self, texts: Sequence[str], model_id: str) -> list[EmbeddingVector]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not text for text in texts):
            raise ValueError("texts must not contain empty strings")
        payloads = [{"kind": "embedding", "model": model_id, "input": text} for text in texts]
        values: list[list[float] | None] = [None] * len(texts)
        if self.cache is not None:
            for i, payload in enumerate(payloads):
                hit = self.cache.get(payload)
                if hit is not None:
                    values[i] = [float(v) for v in hit["embedding"]]
        missing = [i for i, v in enumerate(values) if v is None]
        for start in range(0, len(missing), self.batch_size):
            chunk = missing[start : start + self.batch_size]
            chunk_texts = [texts[i] for i in chunk]
            vectors = call_with_retry(
                lambda ts=chunk_texts: self.backend.embed(ts, model_id),
                self.retry,
                self.sleeper,
                describe=f"embed({model_id})",
            )
            for i, vector in zip(chunk, vectors):
                values[i] = vector
                if self.cache is not None:
                    self.cache.put(payloads[i], {"embedding": vector})
        return [EmbeddingVector(values=tuple(v), model_id=model_id) for v in values]  # type: ignore[arg-type]


def cosine_similarity(u: EmbeddingVector | Sequence[float], v: EmbeddingVector | Sequence[float]) -> float:
    a = np.asarray(u.values if isinstance(u, EmbeddingVector) else u, dtype=float)
    b = np.asarray(v.values if isinstance(v, EmbeddingVector) else v, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    norm_a = float(np.linalg.norm(a))
    norm_b = float(np.linalg.norm(b))
    if norm_a == 0.0 or norm_b == 0.0:
        raise ValueError("cosine similarity is undefined for zero-norm vectors")
    return float(np.clip(float(a @ b) / (norm_a * norm_b), -1.0, 1.0))


class NerBackend(Protocol):
    cache_tag: str

    def extract(self, text: str) -> list[EntityMention]: ...


class HttpNerBackend:
    """External tagger: POST {ner_url}/ner with {"text"}, spans validated downstream."""

    def __init__(self, base_url: str, timeout: float = 120.0, client: httpx.Client | None = None):
        self.base_url = base_url.rstrip("/")
        self.cache_tag = f"http:{self.base_url}"
        self._client = client or httpx.Client(timeout=timeout)

    def extract(self, text: str) -> list[EntityMention]:
        data = _post_json(self._client, f"{self.base_url}/ner", {"text": text}, {})
        try:
            raw = data["entities"]
            return [
                EntityMention(
                    surface=str(e["surface"]),
                    label=str(e["label"]),
                    start=int(e["start"]),
                    end=int(e["end"]),
                )
                for e in raw
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise ProviderError(f"malformed NER response: {data!r}") from exc


_NER_PROMPT = (
    "List the named entities that appear in the text below. Respond with a JSON "
    "array only. Each element must be an object with keys \"surface\" (the exact "
    "entity text as it appears) and \"label\" (an entity type such as PERSON, ORG, "
    "GPE, LOC, DATE, CARDINAL, EVENT, WORK_OF_ART, PRODUCT, NORP, FAC). "
    "Respond with [] if there are none.\n"
    "Text: {text}\n"
    "JSON:"
)

_JSON_ARRAY_RE = re.compile(r"\[.*\]", re.DOTALL)


class ChatNerBackend:
    """Fallback tagger that asks the chat model for entities as a JSON list.

    Offsets are recovered by scanning for each surface left to right, which
    guarantees sorted, non-overlapping spans; surfaces that cannot be located
    are dropped.
    """

    def __init__(self, chat: ChatClient, model_id: str):
        self.chat = chat
        self.model_id = model_id
        self.cache_tag = f"chat:{model_id}"

    def extract(self, text: str) -> list[EntityMention]:
        prompt = _NER_PROMPT.replace("{text}", text)
        content = self.chat.generate(
            evaluation_request(self.model_id, prompt, max_tokens=512)
        ).content
        match = _JSON_ARRAY_RE.search(content)
        if match is None:
            return []
        try:
            items = json.loads(match.group(0))
        except json.JSONDecodeError:
            return []
        if not isinstance(items, list):
            return []
        mentions: list[EntityMention] = []
        cursor = 0
        for item in items:
            if not isinstance(item, dict):
                continue
            surface = str(item.get("surface", "") or "")
            if not surface:
                continue
            label = str(item.get("label", "") or "MISC")
            start = text.find(surface, cursor)
            if start < 0:
                continue
            mentions.append(EntityMention(surface=surface, label=label, start=start, end=start + len(surface)))
            cursor = start + len(surface)
        return mentions


def _validate_mentions(text: str, mentions: list[EntityMention]) -> list[EntityMention]:
    ordered = sorted(mentions, key=lambda m: (m.start, m.end))
    previous_end = 0
    for mention in ordered:
        if mention.end > len(text):
            raise ServiceError(f"NER span out of bounds: {mention}")
        if text[mention.start : mention.end] != mention.surface:
            raise ServiceError(f"NER surface does not match source slice: {mention}")
        if mention.start < previous_end:
            raise ServiceError(f"NER spans overlap at {mention}")
        previous_end = mention.end
    return ordered


class NerClient:
    """Caching, validating front end over an NER backend."""

    def __init__(
        self,
        backend: NerBackend,
        cache: ResponseCache | None = None,
        retry: RetryPolicy | None = None,
        sleeper: Callable[[float], None] = time.sleep,
    ):
        self.backend = backend
        self.cache = cache
        self.retry = retry or RetryPolicy()
        self.sleeper = sleeper

    def extract_entities(self, text: str) -> list[EntityMention]:
        if not text:
            return []
        payload = {"kind": "ner", "backend": self.backend.cache_tag, "text": text}
        if self.cache is not None:
            hit = self.cache.get(payload)
            if hit is not None:
                return [
                    EntityMention(
                        surface=e["surface"], label=e["label"], start=e["start"], end=e["end"]
                    )
                    for e in hit["entities"]
                ]
        mentions = call_with_retry(
            lambda: self.backend.extract(text),
            self.retry,
            self.sleeper,
            describe="ner",
        )
        mentions = _validate_mentions(text, mentions)
        if self.cache is not None:
            self.cache.put(
                payload,
                {
                    "entities": [
                        {"surface": m.surface, "label": m.label, "start": m.start, "end": m.end}
                        for m in mentions
                    ]
                },
            )
        return mentions


@dataclass
class Services:
    """The client bundle the synthesis pipelines run against."""

    chat: ChatClient
    chat_model: str
    embedder: EmbeddingClient
    embed_model: str
    ner: NerClient

"""Model and embedding backends.

One wire protocol (OpenAI-compatible REST + server-sent events) serves every
model role in the system: the answer generator, the hierarchy router, the
guardrail/evaluation judges and the embedder. Each role is configured with
its own endpoint, model name and temperature.

Deterministic mock implementations cover every role for offline use. Mocks
share a thread-safe ``CallLog`` that records each backend invocation exactly
once; tests for cache behaviour and guardrail isolation are built on that
log.

Structured responses are validated against a JSON schema (``jsonschema``);
violations surface as SchemaError so callers can decide between retry and
fallback.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator, Protocol, Sequence

import httpx
import jsonschema
import numpy as np

from .errors import DimensionMismatchError, SchemaError, TransportError

MOCK_EMBED_DIM = 256


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"invalid role: {self.role!r}")
        if self.role in ("system", "user") and not self.content:
            raise ValueError(f"{self.role} message content must be non-empty")


@dataclass(frozen=True)
class StructuredRequest:
    """A chat request whose answer must be a JSON object of a given schema."""

    messages: tuple[ChatMessage, ...]
    json_schema: dict
    temperature: float = 0.0
    schema_name: str = "response"

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        props = self.json_schema.get("properties")
        if self.json_schema.get("type") != "object" or not props:
            raise ValueError("json_schema must describe an object with named fields")


def validate_payload(payload: object, schema: dict, raw: str = "") -> dict:
    """Check ``payload`` against ``schema``; return it typed as a dict."""
    try:
        jsonschema.validate(payload, schema)
    except jsonschema.ValidationError as exc:
        raise SchemaError(f"response violates schema: {exc.message}", raw=raw) from None
    if not isinstance(payload, dict):
        raise SchemaError("response is not a JSON object", raw=raw)
    return payload


def parse_structured(raw: str, schema: dict) -> dict:
    """Parse raw model text as JSON and validate it against ``schema``."""
    try:
        payload = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"response is not valid JSON: {exc}", raw=raw) from None
    return validate_payload(payload, schema, raw=raw)


class CallLog:
    """Append-only, thread-safe record of backend invocations.

    Every entry is ``(role, kind, payload)`` where kind is one of
    ``structured | stream | embed``. Appends take a lock, so concurrent
    callers observe a single total order.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._entries: list[tuple[str, str, object]] = []

    def append(self, role: str, kind: str, payload: object) -> None:
        with self._lock:
            self._entries.append((role, kind, payload))

    def entries(self) -> list[tuple[str, str, object]]:
        with self._lock:
            return list(self._entries)

    def count(self, role: str | None = None, kind: str | None = None) -> int:
        with self._lock:
            return sum(
                1
                for r, k, _ in self._entries
                if (role is None or r == role) and (kind is None or k == kind)
            )

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


class ChatBackend(Protocol):
    def chat_structured(self, req: StructuredRequest) -> dict: ...

    def chat_stream(
        self, messages: Sequence[ChatMessage], temperature: float = 0.0
    ) -> Iterator[str]: ...


class EmbeddingBackend(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


def with_retries(fn: Callable, retries: int = 2, backoff_s: float = 0.1):
    """Call ``fn`` retrying transport failures with exponential backoff."""
    attempt = 0
    while True:
        try:
            return fn()
        except TransportError:
            if attempt >= retries:
                raise
            if backoff_s > 0:
                time.sleep(backoff_s * (2**attempt))
            attempt += 1


# ---------------------------------------------------------------------------
# Mock backends
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MockStreamFailure:
    """Scripted mid-stream failure: yields ``text``'s first tokens, then dies."""

    text: str
    fail_after: int


ScriptItem = object  # str | Exception | MockStreamFailure
ScriptRule = Callable[[str, object], object]  # (kind, request) -> str | dict


class MockChatBackend:
    """Deterministic scripted chat backend.

    ``script`` is either an ordered sequence of responses (consumed once
    each, across structured and stream calls alike) or a rule — a callable
    ``(kind, request) -> response`` — for data-dependent mocks. Scripted
    items may be raw strings (JSON text for structured calls, answer text
    for streams), dicts (structured only), exceptions (raised as given) or
    ``MockStreamFailure``.

    Streams split the scripted text into whitespace tokens, so reassembling
    an answer needs the backend's ``token_joiner`` (a single space here; live
    backends emit verbatim fragments and join with the empty string).
    """

    token_joiner = " "

    def __init__(
        self,
        script: Sequence[ScriptItem] | ScriptRule = (),
        *,
        role: str = "chat",
        log: CallLog | None = None,
        token_delay_s: float = 0.0,
    ):
        self.role = role
        self.log = log if log is not None else CallLog()
        self.token_delay_s = token_delay_s
        self._lock = threading.Lock()
        if callable(script):
            self._rule: ScriptRule | None = script
            self._queue: list[ScriptItem] = []
        else:
            self._rule = None
            self._queue = list(script)

    def _next(self, kind: str, request: object) -> object:
        if self._rule is not None:
            return self._rule(kind, request)
        with self._lock:
            if not self._queue:
                raise TransportError(f"mock script for role {self.role!r} exhausted")
            return self._queue.pop(0)

    def chat_structured(self, req: StructuredRequest) -> dict:
        self.log.append(self.role, "structured", req)
        item = self._next("structured", req)
        if isinstance(item, Exception):
            raise item
        if isinstance(item, dict):
            return validate_payload(item, req.json_schema, raw=json.dumps(item))
        return parse_structured(str(item), req.json_schema)

    def chat_stream(
        self, messages: Sequence[ChatMessage], temperature: float = 0.0
    ) -> Iterator[str]:
        self.log.append(self.role, "stream", tuple(messages))
        item = self._next("stream", tuple(messages))
        return self._stream_tokens(item)

    def _stream_tokens(self, item: object) -> Iterator[str]:
        if isinstance(item, Exception):
            raise item
        fail_after = None
        if isinstance(item, MockStreamFailure):
            fail_after = item.fail_after
            text = item.text
        else:
            text = str(item)
        for i, tok in enumerate(text.split()):
            if fail_after is not None and i >= fail_after:
                raise TransportError("mock stream failed mid-answer")
            if self.token_delay_s > 0:
                time.sleep(self.token_delay_s)
            yield tok
        if fail_after is not None and fail_after >= len(text.split()):
            raise TransportError("mock stream failed at end")


def _token_bucket(token: str, dim: int) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") % dim


class HashedBagOfWordsEmbedder:
    """Deterministic mock embedder: hashed bag-of-words, L2-normalized.

    Each lowercased whitespace token hashes (blake2b) into one of ``dim``
    buckets; the bucket counts form the vector, normalized to unit length.
    Shared vocabulary means high similarity, which mirrors how templated
    corpora behave under a real embedding model. Empty texts embed to the
    zero vector.
    """

    def __init__(self, dim: int = MOCK_EMBED_DIM, *, role: str = "embedder",
                 log: CallLog | None = None):
        self.dim = dim
        self.role = role
        self.log = log if log is not None else CallLog()

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed requires at least one text")
        self.log.append(self.role, "embed", tuple(texts))
        out = []
        for text in texts:
            vec = np.zeros(self.dim, dtype=np.float64)
            for tok in text.lower().split():
                vec[_token_bucket(tok, self.dim)] += 1.0
            norm = float(np.linalg.norm(vec))
            if norm > 0:
                vec /= norm
            out.append(vec)
        return out

    def token_buckets(self, text: str) -> set[int]:
        """Buckets a text occupies; lets tests verify collision-freeness."""
        return {_token_bucket(t, self.dim) for t in text.lower().split()}


# ---------------------------------------------------------------------------
# OpenAI-compatible HTTP backends
# ---------------------------------------------------------------------------


def _auth_headers(api_key_env: str | None) -> dict[str, str]:
    headers = {"Content-Type": "application/json"}
    key = os.environ.get(api_key_env) if api_key_env else None
    if key:
        headers["Authorization"] = f"Bearer {key}"
    return headers


def iter_sse_data(lines: Iterable[str]) -> Iterator[str]:
    """Yield the data payload of each server-sent event, stopping at [DONE]."""
    for line in lines:
        line = line.strip()
        if not line or not line.startswith("data:"):
            continue
        payload = line[len("data:") :].strip()
        if payload == "[DONE]":
            return
        yield payload


class OpenAIChatBackend:
    """Chat-completions client for any OpenAI-compatible server.

    Structured calls use ``response_format`` with a JSON schema; streaming
    calls parse server-sent events and yield content deltas verbatim.
    """

    token_joiner = ""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str | None = None,
        timeout_s: float = 60.0,
        role: str = "chat",
        log: CallLog | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.role = role
        self.log = log
        self._client = client or httpx.Client(timeout=timeout_s)

    def _post(self, path: str, body: dict, *, stream: bool = False):
        url = f"{self.base_url}{path}"
        headers = _auth_headers(self.api_key_env)
        try:
            if stream:
                return self._client.stream("POST", url, json=body, headers=headers)
            resp = self._client.post(url, json=body, headers=headers)
            resp.raise_for_status()
            return resp
        except httpx.HTTPError as exc:
            raise TransportError(f"{url}: {exc}") from exc

    def chat_structured(self, req: StructuredRequest) -> dict:
        if self.log is not None:
            self.log.append(self.role, "structured", req)
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in req.messages],
            "temperature": req.temperature,
            "stream": False,
            "response_format": {
                "type": "json_schema",
                "json_schema": {
                    "name": req.schema_name,
                    "schema": req.json_schema,
                    "strict": True,
                },
            },
        }
        resp = self._post("/chat/completions", body)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, ValueError) as exc:
            raise TransportError(f"malformed chat completion response: {exc}") from exc
        return parse_structured(content, req.json_schema)

    def chat_stream(
        self, messages: Sequence[ChatMessage], temperature: float = 0.0
    ) -> Iterator[str]:
        if self.log is not None:
            self.log.append(self.role, "stream", tuple(messages))
        body = {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in messages],
            "temperature": temperature,
            "stream": True,
        }
        ctx = self._post("/chat/completions", body, stream=True)

        def gen() -> Iterator[str]:
            try:
                with ctx as resp:
                    if resp.status_code >= 400:
                        raise TransportError(f"stream request failed: {resp.status_code}")
                    for payload in iter_sse_data(resp.iter_lines()):
                        try:
                            frame = json.loads(payload)
                            delta = frame["choices"][0]["delta"]
                        except (ValueError, KeyError, IndexError):
                            continue  # keep-alives and non-content frames
                        piece = delta.get("content")
                        if piece:
                            yield piece
            except httpx.HTTPError as exc:
                raise TransportError(f"stream failed: {exc}") from exc

        return gen()


class OpenAIEmbeddingBackend:
    """Embeddings client for any OpenAI-compatible server."""

    def __init__(
        self,
        base_url: str,
        model: str,
        *,
        api_key_env: str | None = None,
        timeout_s: float = 60.0,
        role: str = "embedder",
        log: CallLog | None = None,
        client: httpx.Client | None = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.role = role
        self.log = log
        self._client = client or httpx.Client(timeout=timeout_s)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("embed requires at least one text")
        if self.log is not None:
            self.log.append(self.role, "embed", tuple(texts))
        url = f"{self.base_url}/embeddings"
        try:
            resp = self._client.post(
                url,
                json={"model": self.model, "input": list(texts)},
                headers=_auth_headers(self.api_key_env),
            )
            resp.raise_for_status()
            data = resp.json()["data"]
        except httpx.HTTPError as exc:
            raise TransportError(f"{url}: {exc}") from exc
        except (KeyError, ValueError) as exc:
            raise TransportError(f"malformed embeddings response: {exc}") from exc
        vectors = [np.asarray(item["embedding"], dtype=np.float64) for item in data]
        dims = {v.shape[0] for v in vectors}
        if len(dims) > 1:
            raise DimensionMismatchError(f"mixed embedding dims: {sorted(dims)}")
        return vectors

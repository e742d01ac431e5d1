"""Two-stage safety layer.

Stage one screens the raw query against a composite stop-word dictionary
(base set plus operator-supplied custom phrases, word-boundary matching)
before any routing, retrieval or generation work happens.

Stage two validates the streamed answer: the first ``stream_prefix_tokens``
tokens are withheld from the client while a structured judge call assesses
them against the query and retrieval context. Generation is not interrupted
— upstream tokens keep flowing into a queue on a worker thread while the
judge runs — but nothing reaches the client until the verdict. An allowed
verdict flushes the buffer and forwards the rest as it arrives; a blocked
verdict discards everything and substitutes the refusal notice. Judge
failures block (fail-closed: safety over availability).
"""

from __future__ import annotations

import queue
import re
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

from .backends import ChatBackend, ChatMessage, StructuredRequest
from .errors import BackendError

DEFAULT_STREAM_PREFIX_TOKENS = 150
DEFAULT_REFUSAL_NOTICE = (
    "This request cannot be answered here. It falls outside what this "
    "assistant is allowed to discuss."
)
JUDGE_UNAVAILABLE_REASON = "guardrail judge unavailable"
_BASE_STOPWORDS = Path(__file__).parent / "data" / "stopwords_base.txt"
_PROMPT = Path(__file__).parent / "prompts" / "guardrail_stream.txt"

STREAM_JUDGE_SCHEMA = {
    "type": "object",
    "properties": {"allowed": {"type": "boolean"}, "reason": {"type": "string"}},
    "required": ["allowed", "reason"],
    "additionalProperties": False,
}


@dataclass(frozen=True)
class StopwordDictionary:
    """Ordered, lowercased phrase lists: base set first, then custom terms."""

    base_terms: tuple[str, ...]
    custom_terms: tuple[str, ...]

    def phrases(self) -> tuple[str, ...]:
        seen = dict.fromkeys(self.base_terms)
        seen.update(dict.fromkeys(self.custom_terms))
        return tuple(seen)

    def __len__(self) -> int:
        return len(self.phrases())


@dataclass(frozen=True)
class GuardrailVerdict:
    allowed: bool
    stage: str  # pre_query | stream
    reason: str = ""
    tokens_inspected: int = 0


def _read_phrase_file(path: str | Path) -> list[str]:
    phrases = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip().lower()
        if line and not line.startswith("#"):
            phrases.append(" ".join(line.split()))
    return phrases


def load_stopwords(
    base_path: str | Path | None = None, custom_path: str | Path | None = None
) -> StopwordDictionary:
    """Load base + custom phrase files (newline-delimited, # comments).

    Phrases are lowercased and deduplicated while preserving file order;
    ``base_path`` defaults to the dictionary shipped with the package.
    """
    base = _read_phrase_file(base_path if base_path else _BASE_STOPWORDS)
    custom = _read_phrase_file(custom_path) if custom_path else []
    return StopwordDictionary(base_terms=tuple(base), custom_terms=tuple(custom))


def screen_query(query: str, dictionary: StopwordDictionary) -> GuardrailVerdict:
    """Block the query iff a dictionary phrase matches on word boundaries.

    The reason is the first matching phrase in dictionary order (base terms
    before custom). Substrings inside longer words never match, so
    morphological variants pass.
    """
    normalized = " ".join(query.lower().split())
    for phrase in dictionary.phrases():
        if re.search(rf"\b{re.escape(phrase)}\b", normalized):
            return GuardrailVerdict(allowed=False, stage="pre_query", reason=phrase)
    return GuardrailVerdict(allowed=True, stage="pre_query")


_END = object()


class _StreamError:
    def __init__(self, exc: Exception):
        self.exc = exc


def _pump(stream: Iterator[str], q: queue.Queue) -> None:
    try:
        for token in stream:
            q.put(token)
    except Exception as exc:  # surfaced to the consumer after the last good token
        q.put(_StreamError(exc))
        return
    q.put(_END)


def screen_stream(
    query: str,
    context_text: str,
    token_stream: Iterator[str],
    judge: ChatBackend,
    *,
    prefix_tokens: int = DEFAULT_STREAM_PREFIX_TOKENS,
    refusal_notice: str = DEFAULT_REFUSAL_NOTICE,
    joiner: str = " ",
    temperature: float = 0.0,
    prompt_template: str | None = None,
) -> tuple[GuardrailVerdict, Iterator[str]]:
    """Validate the answer prefix, then forward or block the stream.

    Buffers up to ``prefix_tokens`` tokens (the whole answer if shorter),
    starts a worker thread that keeps draining the upstream generator, and
    issues exactly one structured judge call over (query, context, partial
    answer). Returns the verdict plus the client-facing stream: the buffered
    tokens followed by the live remainder when allowed, or the refusal
    notice alone when blocked. ``context_text`` accepts anything with a
    ``render()`` method or a plain string; ``joiner`` reassembles the
    partial answer from stream tokens for the judge.
    """
    if prefix_tokens < 1:
        raise ValueError("prefix_tokens must be >= 1")
    render = getattr(context_text, "render", None)
    if render is not None:
        context_text = render()

    buffered: list[str] = []
    ended = False
    it = iter(token_stream)
    # Failures here propagate: the prefix never reached the client, so the
    # caller may restart generation cleanly.
    while len(buffered) < prefix_tokens:
        try:
            buffered.append(next(it))
        except StopIteration:
            ended = True
            break

    q: queue.Queue = queue.Queue()
    if ended:
        q.put(_END)
    else:
        threading.Thread(target=_pump, args=(it, q), daemon=True).start()

    template = prompt_template or _PROMPT.read_text(encoding="utf-8")
    prompt = template.format(
        query=query, context=context_text or "(empty)",
        partial_answer=joiner.join(buffered) or "(empty)",
    )
    try:
        payload = judge.chat_structured(
            StructuredRequest(
                messages=(ChatMessage("system", prompt), ChatMessage("user", query)),
                json_schema=STREAM_JUDGE_SCHEMA,
                temperature=temperature,
                schema_name="stream_guardrail",
            )
        )
        allowed = bool(payload["allowed"])
        reason = str(payload.get("reason", ""))
    except BackendError:
        allowed, reason = False, JUDGE_UNAVAILABLE_REASON
    if not allowed and not reason:
        reason = "stream guardrail blocked the response"

    verdict = GuardrailVerdict(
        allowed=allowed,
        stage="stream",
        reason=reason,
        tokens_inspected=len(buffered),
    )

    def forwarded() -> Iterator[str]:
        if not verdict.allowed:
            yield refusal_notice
            return
        yield from buffered
        while True:
            item = q.get()
            if item is _END:
                return
            if isinstance(item, _StreamError):
                raise item.exc
            yield item

    return verdict, forwarded()

"""Hierarchical query routing: domain, then collection, then document.

Each level is a structured-output selection over a closed candidate set: the
model receives the query plus every candidate's id, name and description,
and must answer with ``{"selected_id": <candidate id>, "reason": ...}``. The
schema constrains ``selected_id`` to the candidate ids, and the response is
re-validated defensively. After ``max_retries`` failed attempts (malformed
output, unknown id, transport error) the level resolves to its designated
fallback element, so routing is a total function: every query gets a
consistent three-level path within ``3 * max_retries`` backend calls.

Decisions are cached per (level, normalized query, candidate-set digest);
the digest covers ids, names, descriptions and fallback flags, so any edit
to the hierarchy invalidates stale decisions.
"""

from __future__ import annotations

import hashlib
import threading
from collections import OrderedDict
from dataclasses import dataclass, replace
from pathlib import Path

from .backends import ChatBackend, ChatMessage, StructuredRequest
from .corpus import Registry, children_of
from .errors import BackendError, SchemaError, TransportError

DEFAULT_MAX_RETRIES = 3
DEFAULT_CACHE_CAPACITY = 10_000
_PROMPT_DIR = Path(__file__).parent / "prompts"
LEVELS = ("domain", "collection", "document")


@dataclass(frozen=True)
class RoutingDecision:
    level: str
    chosen_id: str
    used_fallback: bool
    attempts: int  # backend calls made for this decision; 0 only from cache
    from_cache: bool = False
    raw_outputs: tuple[str, ...] = ()


@dataclass(frozen=True)
class RoutingTrace:
    query: str
    domain: RoutingDecision
    collection: RoutingDecision
    document: RoutingDecision

    def path(self) -> tuple[str, str, str]:
        return (self.domain.chosen_id, self.collection.chosen_id, self.document.chosen_id)


def normalize_query(query: str) -> str:
    """Lowercase, trim and collapse internal whitespace (cache-key hygiene)."""
    return " ".join(query.lower().split())


def candidate_digest(candidates) -> str:
    """Digest of the candidate set: id, display name, description, fallback flag."""
    h = hashlib.sha256()
    for c in candidates:
        name, description = _display_fields(c)
        for part in (c.id, name, description, str(c.is_fallback)):
            h.update(part.encode("utf-8"))
            h.update(b"\x1f")
        h.update(b"\x1e")
    return h.hexdigest()


class RouterCache:
    """LRU cache of routing decisions, safe for concurrent use.

    Keys are (level, normalized query, candidate digest). Decisions for the
    same key are identical under a deterministic backend, so concurrent
    insert races are benign (last writer wins).
    """

    def __init__(self, capacity: int = DEFAULT_CACHE_CAPACITY):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._lock = threading.Lock()
        self._entries: OrderedDict[tuple[str, str, str], RoutingDecision] = OrderedDict()

    def get(self, key: tuple[str, str, str]) -> RoutingDecision | None:
        with self._lock:
            decision = self._entries.get(key)
            if decision is not None:
                self._entries.move_to_end(key)
            return decision

    def put(self, key: tuple[str, str, str], decision: RoutingDecision) -> None:
        with self._lock:
            self._entries[key] = decision
            self._entries.move_to_end(key)
            while len(self._entries) > self.capacity:
                self._entries.popitem(last=False)

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


def _display_fields(candidate) -> tuple[str, str]:
    # Documents expose title + metadata instead of name + description.
    name = getattr(candidate, "name", None)
    if name is None:
        name = getattr(candidate, "title", "")
        meta = getattr(candidate, "metadata", {})
        description = "; ".join(f"{k}: {v}" for k, v in meta.items())
    else:
        description = getattr(candidate, "description", "")
    return name, description


class RouterPrompts:
    """Per-level prompt templates with {query} and {candidates} slots.

    Defaults ship with the package (``prompts/route_<level>.txt``) and can be
    overridden by pointing ``prompt_dir`` at a directory with the same file
    names.
    """

    def __init__(self, prompt_dir: str | Path | None = None):
        base = Path(prompt_dir) if prompt_dir else _PROMPT_DIR
        self._templates = {
            level: (base / f"route_{level}.txt").read_text(encoding="utf-8")
            for level in LEVELS
        }

    def render(self, level: str, query: str, candidates) -> str:
        lines = []
        for c in candidates:
            name, description = _display_fields(c)
            line = f"- {c.id}: {name}"
            if description:
                line += f" — {description}"
            lines.append(line)
        return self._templates[level].format(query=query, candidates="\n".join(lines))


def selection_schema(candidate_ids: list[str]) -> dict:
    return {
        "type": "object",
        "properties": {
            "selected_id": {"type": "string", "enum": list(candidate_ids)},
            "reason": {"type": "string"},
        },
        "required": ["selected_id", "reason"],
        "additionalProperties": False,
    }


def route_level(
    query: str,
    level: str,
    candidates,
    llm: ChatBackend,
    *,
    max_retries: int = DEFAULT_MAX_RETRIES,
    prompts: RouterPrompts | None = None,
) -> RoutingDecision:
    """Select one candidate at a level; total, never raises.

    Up to ``max_retries`` structured calls are issued; the first response
    whose selected_id names a presented candidate wins. Anything else —
    malformed JSON, schema violations, unknown ids, transport failures —
    counts as a failed attempt, and exhaustion resolves to the level's
    fallback element.
    """
    if not candidates:
        raise ValueError("route_level requires a non-empty candidate list")
    fallback = [c for c in candidates if c.is_fallback]
    if len(fallback) != 1:
        raise ValueError(f"{level} candidates must include exactly one fallback")
    if prompts is None:
        prompts = RouterPrompts()

    candidate_ids = [c.id for c in candidates]
    req = StructuredRequest(
        messages=(
            ChatMessage("system", prompts.render(level, query, candidates)),
            ChatMessage("user", query),
        ),
        json_schema=selection_schema(candidate_ids),
        temperature=0.0,
        schema_name=f"route_{level}",
    )

    raw_outputs: list[str] = []
    for attempt in range(1, max_retries + 1):
        try:
            payload = llm.chat_structured(req)
        except SchemaError as exc:
            raw_outputs.append(exc.raw or str(exc))
            continue
        except (TransportError, BackendError) as exc:
            raw_outputs.append(f"<transport error: {exc}>")
            continue
        raw_outputs.append(str(payload))
        selected = payload.get("selected_id")
        if selected in candidate_ids:
            return RoutingDecision(
                level=level,
                chosen_id=selected,
                used_fallback=False,
                attempts=attempt,
                raw_outputs=tuple(raw_outputs),
            )
    return RoutingDecision(
        level=level,
        chosen_id=fallback[0].id,
        used_fallback=True,
        attempts=max_retries,
        raw_outputs=tuple(raw_outputs),
    )


def route(
    query: str,
    reg: Registry,
    llm: ChatBackend,
    cache: RouterCache | None = None,
    *,
    max_retries: int = DEFAULT_MAX_RETRIES,
    prompts: RouterPrompts | None = None,
) -> RoutingTrace:
    """Route a query top-down through the hierarchy.

    Each level is scoped to the children of the previous choice and consults
    the cache before calling the backend. Cache hits return the stored
    choice with ``from_cache=True`` and ``attempts=0`` (no calls made this
    time). The resulting path is always parent-consistent, including when
    fallbacks fire: a fallback choice scopes the next level to its children.
    """
    if prompts is None:
        prompts = RouterPrompts()
    nquery = normalize_query(query)

    def decide(level: str, candidates) -> RoutingDecision:
        key = (level, nquery, candidate_digest(candidates))
        if cache is not None:
            hit = cache.get(key)
            if hit is not None:
                return replace(hit, from_cache=True, attempts=0, raw_outputs=())
        decision = route_level(
            query, level, candidates, llm, max_retries=max_retries, prompts=prompts
        )
        if cache is not None:
            cache.put(key, decision)
        return decision

    domain = decide("domain", children_of(reg, "domain"))
    collection = decide("collection", children_of(reg, "collection", domain.chosen_id))
    document = decide("document", children_of(reg, "document", collection.chosen_id))
    return RoutingTrace(query=query, domain=domain, collection=collection,
                        document=document)

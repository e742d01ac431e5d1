"""Deterministic rule backends for fully offline operation.

These plug into the same backend interfaces as the live HTTP clients, so the
whole query path runs without network access: a lexical-overlap router, a
context-echo generator, an allow-everything stream judge, and an oracle
router that always picks the path to a known target document (used by the
scaled experiment runner, where routing correctness is held fixed by
construction).
"""

from __future__ import annotations

import re

from .backends import CallLog, MockChatBackend, StructuredRequest

_CANDIDATE_LINE = re.compile(r"^- (?P<id>[A-Za-z0-9_-]+): (?P<rest>.*)$", re.MULTILINE)


def _last_user_content(messages) -> str:
    for msg in reversed(messages):
        if msg.role == "user":
            return msg.content
    return ""


def _candidate_ids(req: StructuredRequest) -> list[str]:
    return list(req.json_schema["properties"]["selected_id"]["enum"])


def overlap_router_rule(kind: str, request) -> dict:
    """Pick the candidate whose prompt line shares most tokens with the query.

    Ties resolve to the earlier candidate (manifest order). A zero-overlap
    query lands on the first candidate.
    """
    req: StructuredRequest = request
    ids = _candidate_ids(req)
    system = req.messages[0].content
    query_tokens = set(_last_user_content(req.messages).lower().split())
    lines = {m.group("id"): m.group("rest") for m in _CANDIDATE_LINE.finditer(system)}
    best_id, best_score = ids[0], -1
    for cid in ids:
        tokens = set(lines.get(cid, "").lower().split())
        score = len(query_tokens & tokens)
        if score > best_score:
            best_id, best_score = cid, score
    return {"selected_id": best_id, "reason": f"token overlap {best_score}"}


class OracleRouter:
    """Routes every known query to its target document's exact path.

    ``paths`` maps a normalized query to (domain_id, collection_id,
    document_id). Unknown queries raise KeyError loudly rather than guessing.
    """

    def __init__(self, paths: dict[str, tuple[str, str, str]]):
        self.paths = dict(paths)

    def __call__(self, kind: str, request) -> dict:
        req: StructuredRequest = request
        query = " ".join(_last_user_content(req.messages).lower().split())
        domain_id, collection_id, document_id = self.paths[query]
        level = req.schema_name.removeprefix("route_")
        chosen = {"domain": domain_id, "collection": collection_id,
                  "document": document_id}[level]
        return {"selected_id": chosen, "reason": "oracle"}


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")
_SOURCE_HEADER = re.compile(r"^\[source: .*\]$", re.MULTILINE)


def split_sentences(text: str) -> list[str]:
    return [s.strip() for s in _SENTENCE_SPLIT.split(text.strip()) if s.strip()]


def echo_generator_rule(kind: str, request) -> str:
    """Answer with the context sentence that best overlaps the question.

    A stand-in for a grounded generator: deterministic, and faithful to the
    retrieved context by construction. Falls back to an honest "not found"
    sentence when the context is empty.
    """
    messages = request if kind == "stream" else request.messages
    system = messages[0].content
    question = _last_user_content(messages)
    start = system.find("CONTEXT:\n")
    context = system[start + len("CONTEXT:\n") :] if start >= 0 else system
    context = _SOURCE_HEADER.sub("", context)
    q_tokens = set(question.lower().split())
    best, best_score = "", -1
    for sentence in split_sentences(context):
        score = len(q_tokens & set(sentence.lower().split()))
        if score > best_score:
            best, best_score = sentence, score
    if not best:
        return "The provided context does not contain this information."
    return f"Based on the knowledge base: {best}"


def allow_all_judge_rule(kind: str, request) -> dict:
    return {"allowed": True, "reason": "answer stays within the provided context"}


def offline_router_backend(log: CallLog | None = None) -> MockChatBackend:
    return MockChatBackend(overlap_router_rule, role="router", log=log)


def oracle_router_backend(
    paths: dict[str, tuple[str, str, str]], log: CallLog | None = None
) -> MockChatBackend:
    return MockChatBackend(OracleRouter(paths), role="router", log=log)


def offline_generator_backend(log: CallLog | None = None) -> MockChatBackend:
    return MockChatBackend(echo_generator_rule, role="generator", log=log)


def offline_stream_judge_backend(log: CallLog | None = None) -> MockChatBackend:
    return MockChatBackend(allow_all_judge_rule, role="judge", log=log)

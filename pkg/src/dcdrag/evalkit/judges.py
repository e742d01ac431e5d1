"""Judges that assign metric verdicts.

The LLM judges issue one structured call per record per metric and rebuild
the verdict from the returned criteria. The three binary metrics run at
temperature 0 for deterministic scoring; retrieval coverage runs at 0.1,
allowing limited variability in the explanatory rationale. A judge that
fails after retries raises JudgeError: the caller excludes the record and
reports the exclusion, it never fabricates a verdict.

Two non-LLM judges exist for deterministic runs: a mechanical coverage
judge (sentence-level fact containment) and a heuristic offline suite used
by the fully offline experiment mode.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from ..backends import ChatBackend, ChatMessage, StructuredRequest
from ..errors import BackendError, JudgeError
from .metrics import ArcVerdict, CrVerdict, FaVerdict, RcsVerdict

_PROMPT_DIR = Path(__file__).parent.parent / "prompts"

ARC_SCHEMA = {
    "type": "object",
    "properties": {
        "direct_answer": {"type": "boolean"},
        "complete": {"type": "boolean"},
        "specific": {"type": "boolean"},
        "vague": {"type": "boolean"},
        "rationale": {"type": "string"},
    },
    "required": ["direct_answer", "complete", "specific", "vague", "rationale"],
    "additionalProperties": False,
}

CR_SCHEMA = {
    "type": "object",
    "properties": {
        "relevant_facts": {"type": "array", "items": {"type": "string"}},
        "used_facts": {"type": "array", "items": {"type": "string"}},
        "equivalent": {"type": "boolean"},
        "rationale": {"type": "string"},
    },
    "required": ["relevant_facts", "used_facts", "equivalent", "rationale"],
    "additionalProperties": False,
}

FA_SCHEMA = {
    "type": "object",
    "properties": {
        "supported": {"type": "boolean"},
        "contradicts": {"type": "boolean"},
        "hallucinates": {"type": "boolean"},
        "rationale": {"type": "string"},
    },
    "required": ["supported", "contradicts", "hallucinates", "rationale"],
    "additionalProperties": False,
}

RCS_SCHEMA = {
    "type": "object",
    "properties": {
        "coverage": {"type": "string", "enum": ["none", "partial", "complete"]},
        "rationale": {"type": "string"},
    },
    "required": ["coverage", "rationale"],
    "additionalProperties": False,
}


def _template(name: str) -> str:
    return (_PROMPT_DIR / name).read_text(encoding="utf-8")


def _judge_call(
    backend: ChatBackend,
    prompt: str,
    schema: dict,
    name: str,
    temperature: float,
    retries: int,
) -> dict:
    last: Exception | None = None
    for _ in range(retries + 1):
        try:
            return backend.chat_structured(
                StructuredRequest(
                    messages=(
                        ChatMessage("system", prompt),
                        ChatMessage("user", "Evaluate now."),
                    ),
                    json_schema=schema,
                    temperature=temperature,
                    schema_name=name,
                )
            )
        except BackendError as exc:
            last = exc
    raise JudgeError(f"{name} judge failed after {retries + 1} attempts: {last}")


def judge_arc(
    question: str,
    answer: str,
    backend: ChatBackend,
    *,
    temperature: float = 0.0,
    retries: int = 2,
    prompt_template: str | None = None,
) -> ArcVerdict:
    prompt = (prompt_template or _template("judge_arc.txt")).format(
        question=question, answer=answer
    )
    payload = _judge_call(backend, prompt, ARC_SCHEMA, "judge_arc", temperature, retries)
    return ArcVerdict(
        direct_answer=bool(payload["direct_answer"]),
        complete=bool(payload["complete"]),
        specific=bool(payload["specific"]),
        vague=bool(payload["vague"]),
        rationale=str(payload["rationale"]),
    )


def judge_cr(
    context: str,
    answer: str,
    backend: ChatBackend,
    *,
    temperature: float = 0.0,
    retries: int = 2,
    prompt_template: str | None = None,
) -> CrVerdict:
    prompt = (prompt_template or _template("judge_cr.txt")).format(
        context=context, answer=answer
    )
    payload = _judge_call(backend, prompt, CR_SCHEMA, "judge_cr", temperature, retries)
    return CrVerdict(
        relevant_facts=tuple(str(f) for f in payload["relevant_facts"]),
        used_facts=tuple(str(f) for f in payload["used_facts"]),
        judged_equivalent=bool(payload["equivalent"]),
        rationale=str(payload["rationale"]),
    )


def judge_fa(
    context: str,
    answer: str,
    backend: ChatBackend,
    *,
    temperature: float = 0.0,
    retries: int = 2,
    prompt_template: str | None = None,
) -> FaVerdict:
    prompt = (prompt_template or _template("judge_fa.txt")).format(
        context=context, answer=answer
    )
    payload = _judge_call(backend, prompt, FA_SCHEMA, "judge_fa", temperature, retries)
    return FaVerdict(
        supported=bool(payload["supported"]),
        contradicts=bool(payload["contradicts"]),
        hallucinates=bool(payload["hallucinates"]),
        rationale=str(payload["rationale"]),
    )


def judge_rcs(
    reference_context: str,
    retrieved_context: str,
    backend: ChatBackend,
    *,
    temperature: float = 0.1,
    retries: int = 2,
    prompt_template: str | None = None,
) -> RcsVerdict:
    prompt = (prompt_template or _template("judge_rcs.txt")).format(
        reference_context=reference_context, retrieved_context=retrieved_context
    )
    payload = _judge_call(backend, prompt, RCS_SCHEMA, "judge_rcs", temperature, retries)
    return RcsVerdict(coverage=str(payload["coverage"]),
                      rationale=str(payload["rationale"]))


# ---------------------------------------------------------------------------
# Deterministic judges
# ---------------------------------------------------------------------------

_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def _normalize(text: str) -> str:
    return " ".join(text.lower().split())


def sentence_facts(text: str) -> list[str]:
    """Default fact extractor: non-empty sentences of the text."""
    return [s.strip() for s in _SENTENCE_SPLIT.split(text.strip()) if s.strip()]


@dataclass(frozen=True)
class MechanicalRcsJudge:
    """Coverage by fact containment, no model involved.

    Extracts facts from the reference context (sentences by default) and
    checks each for verbatim presence, after whitespace/case normalization,
    in the retrieved context: all present -> complete, none -> none,
    otherwise partial.
    """

    fact_extractor: Callable[[str], list[str]] = sentence_facts

    def __call__(self, reference_context: str, retrieved_context: str) -> RcsVerdict:
        facts = self.fact_extractor(reference_context)
        if not facts:
            return RcsVerdict(coverage="complete", rationale="no reference facts")
        haystack = _normalize(retrieved_context)
        present = sum(1 for f in facts if _normalize(f) in haystack)
        if present == len(facts):
            coverage = "complete"
        elif present == 0:
            coverage = "none"
        else:
            coverage = "partial"
        return RcsVerdict(
            coverage=coverage, rationale=f"{present}/{len(facts)} reference facts found"
        )


_STOP_TOKENS = frozenset(
    "a an the of at in on for to does do is are how many what which with".split()
)


def _content_tokens(text: str) -> set[str]:
    return {t.strip("?.,!") for t in text.lower().split()} - _STOP_TOKENS - {""}


def heuristic_arc(question: str, answer: str) -> ArcVerdict:
    """Offline stand-in: direct iff the answer shares content with the question."""
    overlap = _content_tokens(question) & _content_tokens(answer)
    has_answer = bool(answer.strip())
    return ArcVerdict(
        direct_answer=bool(overlap),
        complete=has_answer,
        specific=any(ch.isdigit() for ch in answer) or bool(overlap),
        vague=not has_answer,
        rationale=f"token overlap {len(overlap)}",
    )


def heuristic_cr(context: str, answer: str) -> CrVerdict:
    """Offline stand-in: the answer should reuse a context sentence."""
    answer_norm = _normalize(answer)
    relevant = [s for s in sentence_facts(context) if _normalize(s) in answer_norm]
    return CrVerdict(
        relevant_facts=tuple(relevant),
        used_facts=tuple(relevant),
        judged_equivalent=bool(relevant),
        rationale="answer reuses context sentences" if relevant else "no reuse found",
    )


def heuristic_fa(context: str, answer: str) -> FaVerdict:
    """Offline stand-in: supported iff answer content tokens appear in context."""
    extra = _content_tokens(answer) - _content_tokens(context)
    extra -= {"based", "knowledge", "base:", "base"}  # echo-generator framing
    return FaVerdict(
        supported=not extra,
        contradicts=False,
        hallucinates=bool(extra),
        rationale=f"{len(extra)} unsupported tokens",
    )

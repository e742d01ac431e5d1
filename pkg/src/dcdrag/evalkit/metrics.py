"""Verdict types and aggregation for the four quality metrics.

Three strict-binary metrics score each (question, answer, context) record:

* answer relevance & completeness — pass iff the answer is direct, complete
  and specific, and not vague;
* context recall — pass iff the set of context facts the answer uses is
  equivalent to the set of relevant facts in the context;
* factual accuracy — pass iff every statement is supported by the context
  and the answer neither contradicts it nor adds facts absent from it.

Retrieval coverage scores each record 0/1/2 for whether the retrieved
context reproduces none, part, or all of the reference context. Every
aggregate is the plain arithmetic mean over the evaluated records.

The pass/fail bits are *properties recomputed from the criteria*, never
stored: a judge that reports inconsistent summary fields cannot influence
them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from ..errors import EmptyDatasetError

COVERAGE_SCORES = {"none": 0, "partial": 1, "complete": 2}


@dataclass(frozen=True)
class ArcVerdict:
    """Answer relevance & completeness criteria for one record."""

    direct_answer: bool
    complete: bool
    specific: bool
    vague: bool
    rationale: str = ""

    @property
    def passed(self) -> bool:
        return self.direct_answer and self.complete and self.specific and not self.vague


@dataclass(frozen=True)
class CrVerdict:
    """Context-recall verdict: judged equivalence of fact sets.

    The judge enumerates the relevant facts it sees in the context and the
    facts the answer uses, then asserts their equivalence as a single
    boolean. Two empty sets are vacuously equivalent regardless of what the
    judge claimed; such records are flagged so reports can surface them.
    """

    relevant_facts: tuple[str, ...]
    used_facts: tuple[str, ...]
    judged_equivalent: bool
    rationale: str = ""

    @property
    def vacuous(self) -> bool:
        return not self.relevant_facts and not self.used_facts

    @property
    def passed(self) -> bool:
        if self.vacuous:
            return True
        return self.judged_equivalent


@dataclass(frozen=True)
class FaVerdict:
    """Factual-accuracy criteria for one record."""

    supported: bool
    contradicts: bool
    hallucinates: bool
    rationale: str = ""

    @property
    def passed(self) -> bool:
        return self.supported and not self.contradicts and not self.hallucinates


@dataclass(frozen=True)
class RcsVerdict:
    """Retrieval-coverage verdict: none/partial/complete mapped to 0/1/2."""

    coverage: str
    rationale: str = ""

    def __post_init__(self):
        if self.coverage not in COVERAGE_SCORES:
            raise ValueError(f"coverage must be none|partial|complete, "
                             f"got {self.coverage!r}")

    @property
    def score(self) -> int:
        return COVERAGE_SCORES[self.coverage]


@dataclass(frozen=True)
class Aggregates:
    sb_arc: float
    sb_cr: float
    sb_fa: float
    rcs: float
    n: int


def mean(values: Sequence[float]) -> float:
    if not values:
        raise EmptyDatasetError("cannot aggregate zero records")
    return sum(values) / len(values)


def aggregate(
    arc_values: Sequence[int],
    cr_values: Sequence[int],
    fa_values: Sequence[int],
    rcs_values: Sequence[int],
) -> Aggregates:
    """Arithmetic means over per-record values (0/1 bits; 0/1/2 coverage).

    All four lists must cover the same records, in the same order.
    """
    n = len(arc_values)
    if not (len(cr_values) == len(fa_values) == len(rcs_values) == n):
        raise ValueError("per-record value lists must have equal length")
    return Aggregates(
        sb_arc=mean(arc_values),
        sb_cr=mean(cr_values),
        sb_fa=mean(fa_values),
        rcs=mean(rcs_values),
        n=n,
    )

"""Evaluation runner: answer every record, judge, aggregate, report.

For each record the pipeline answers the question; the three binary judges
score (question, answer, retrieved context); the coverage judge compares the
retrieved context against the record's reference context. Blocked queries
score zero on everything and are counted separately. Records whose judges
fail after retries are excluded from the aggregates, with the exclusion
count reported — never silently dropped, never fabricated.

``run_experiment`` reproduces the full offline experiment: generate the
template corpus and dataset, build a mock-embedded index, answer every
record in both pipeline modes (routing held correct by an oracle in the
hierarchical mode), and report all four aggregates plus the operational
metrics. Deterministic under its seed.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable

from ..backends import CallLog
from ..config import PipelineConfig
from ..errors import EmptyDatasetError, JudgeError
from ..mocks import (
    offline_stream_judge_backend,
    oracle_router_backend,
    offline_generator_backend,
    offline_router_backend,
)
from ..pipeline import Pipeline, QueryOutcome, RoleBackends, build_pipeline
from ..routing import normalize_query
from .generate import CorpusSpec, EvalRecord, gen_corpus, gen_qac
from .judges import (
    MechanicalRcsJudge,
    heuristic_arc,
    heuristic_cr,
    heuristic_fa,
    judge_arc,
    judge_cr,
    judge_fa,
    judge_rcs,
)
from .metrics import Aggregates, ArcVerdict, CrVerdict, FaVerdict, RcsVerdict, aggregate

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class JudgeSuite:
    """Pluggable judges, one callable per metric."""

    arc: Callable[[str, str], ArcVerdict]
    cr: Callable[[str, str], CrVerdict]
    fa: Callable[[str, str], FaVerdict]
    rcs: Callable[[str, str], RcsVerdict]

    @classmethod
    def offline(cls) -> "JudgeSuite":
        """Deterministic heuristic judges plus the mechanical coverage judge."""
        return cls(
            arc=heuristic_arc,
            cr=heuristic_cr,
            fa=heuristic_fa,
            rcs=MechanicalRcsJudge(),
        )

    @classmethod
    def llm(cls, backend, *, retries: int = 2) -> "JudgeSuite":
        return cls(
            arc=lambda q, a: judge_arc(q, a, backend, retries=retries),
            cr=lambda c, a: judge_cr(c, a, backend, retries=retries),
            fa=lambda c, a: judge_fa(c, a, backend, retries=retries),
            rcs=lambda ref, retr: judge_rcs(ref, retr, backend, retries=retries),
        )


@dataclass(frozen=True)
class RecordEval:
    """Everything one record produced during evaluation."""

    index: int
    question: str
    source_document_id: str
    answer: str
    blocked: bool
    excluded: bool
    error: str = ""
    arc: ArcVerdict | None = None
    cr: CrVerdict | None = None
    fa: FaVerdict | None = None
    rcs: RcsVerdict | None = None
    end_to_end_ms: float = 0.0
    time_to_first_token_ms: float = 0.0

    def to_dict(self) -> dict:
        data = asdict(self)
        for name in ("arc", "cr", "fa"):
            if data[name] is not None:
                data[name]["passed"] = getattr(self, name).passed
        if data["cr"] is not None:
            data["cr"]["vacuous"] = self.cr.vacuous
        if data["rcs"] is not None:
            data["rcs"]["score"] = self.rcs.score
        return data


@dataclass(frozen=True)
class EvalReport:
    mode: str
    aggregates: Aggregates
    records: tuple[RecordEval, ...]
    excluded_count: int
    blocked_count: int
    vacuous_cr_count: int
    operational: dict = field(default_factory=dict)

    def to_dict(self, include_timings: bool = True) -> dict:
        data = {
            "mode": self.mode,
            "n": self.aggregates.n,
            "sb_arc": self.aggregates.sb_arc,
            "sb_cr": self.aggregates.sb_cr,
            "sb_fa": self.aggregates.sb_fa,
            "rcs": self.aggregates.rcs,
            "excluded_count": self.excluded_count,
            "blocked_count": self.blocked_count,
            "vacuous_cr_count": self.vacuous_cr_count,
            "records": [r.to_dict() for r in self.records],
        }
        if include_timings:
            data["operational"] = dict(self.operational)
        else:
            for record in data["records"]:
                record.pop("end_to_end_ms", None)
                record.pop("time_to_first_token_ms", None)
        return data


def _evaluate_record(
    index: int, record: EvalRecord, pipeline: Pipeline, judges: JudgeSuite, mode: str
) -> RecordEval:
    outcome: QueryOutcome = pipeline.answer_query(record.question, mode)
    retrieved = outcome.context.render() if outcome.context else ""
    timings = {
        "end_to_end_ms": outcome.timings.end_to_end_ms,
        "time_to_first_token_ms": outcome.timings.time_to_first_token_ms,
    }
    if outcome.blocked:
        return RecordEval(
            index=index,
            question=record.question,
            source_document_id=record.source_document_id,
            answer=outcome.answer_text,
            blocked=True,
            excluded=False,
            **timings,
        )
    try:
        arc = judges.arc(record.question, outcome.answer_text)
        cr = judges.cr(retrieved, outcome.answer_text)
        fa = judges.fa(retrieved, outcome.answer_text)
        rcs = judges.rcs(record.reference_context, retrieved)
    except JudgeError as exc:
        logger.warning("record %d unevaluable, excluded: %s", index, exc)
        return RecordEval(
            index=index,
            question=record.question,
            source_document_id=record.source_document_id,
            answer=outcome.answer_text,
            blocked=False,
            excluded=True,
            error=str(exc),
            **timings,
        )
    return RecordEval(
        index=index,
        question=record.question,
        source_document_id=record.source_document_id,
        answer=outcome.answer_text,
        blocked=False,
        excluded=False,
        arc=arc,
        cr=cr,
        fa=fa,
        rcs=rcs,
        **timings,
    )


def run_eval(
    records: list[EvalRecord],
    pipeline: Pipeline,
    judges: JudgeSuite,
    mode: str,
    *,
    parallelism: int = 1,
) -> EvalReport:
    """Evaluate every record and aggregate.

    Records may be evaluated concurrently (``parallelism`` workers); the
    report is assembled in dataset order either way. Aggregates cover the
    evaluated records: blocked queries count as zeros, judge-failed records
    are excluded from the denominator.
    """
    if not records:
        raise EmptyDatasetError("evaluation dataset is empty")
    started = time.perf_counter()
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            evals = list(
                pool.map(
                    lambda item: _evaluate_record(
                        item[0], item[1], pipeline, judges, mode
                    ),
                    enumerate(records),
                )
            )
    else:
        evals = [
            _evaluate_record(i, r, pipeline, judges, mode)
            for i, r in enumerate(records)
        ]
    total_s = time.perf_counter() - started

    scored = [e for e in evals if not e.excluded]
    excluded = len(evals) - len(scored)
    if not scored:
        raise JudgeError("every record was excluded by judge failures")
    arc_bits = [0 if e.blocked else int(e.arc.passed) for e in scored]
    cr_bits = [0 if e.blocked else int(e.cr.passed) for e in scored]
    fa_bits = [0 if e.blocked else int(e.fa.passed) for e in scored]
    rcs_scores = [0 if e.blocked else e.rcs.score for e in scored]

    return EvalReport(
        mode=mode,
        aggregates=aggregate(arc_bits, cr_bits, fa_bits, rcs_scores),
        records=tuple(evals),
        excluded_count=excluded,
        blocked_count=sum(1 for e in scored if e.blocked),
        vacuous_cr_count=sum(
            1 for e in scored if not e.blocked and e.cr is not None and e.cr.vacuous
        ),
        operational={
            "total_eval_time_s": total_s,
            "mean_end_to_end_ms": sum(e.end_to_end_ms for e in evals) / len(evals),
            "mean_ttft_ms": sum(e.time_to_first_token_ms for e in evals) / len(evals),
        },
    )


_TABLE_ROWS = (
    ("Strict Binary Answer Relevance", "sb_arc"),
    ("Strict Binary Context Recall", "sb_cr"),
    ("Strict Binary Factual Accuracy", "sb_fa"),
    ("Retrieval Coverage Score", "rcs"),
)


def comparison_table(dcd: EvalReport, naive: EvalReport) -> str:
    """Side-by-side metric table for the two pipeline modes."""
    width = max(len(label) for label, _ in _TABLE_ROWS)
    lines = [f"{'Metrics':<{width}}  {'DCD':>6}  {'Naive':>6}"]
    lines.append("-" * (width + 16))
    for label, attr in _TABLE_ROWS:
        lines.append(
            f"{label:<{width}}  "
            f"{getattr(dcd.aggregates, attr):>6.2f}  "
            f"{getattr(naive.aggregates, attr):>6.2f}"
        )
    lines.append(f"(records: {dcd.aggregates.n} per mode)")
    return "\n".join(lines)


@dataclass(frozen=True)
class ExperimentResult:
    dcd: EvalReport
    naive: EvalReport
    records: list[EvalRecord]
    manifest: dict


def run_experiment(
    seed: int,
    *,
    corpus_spec: CorpusSpec | None = None,
    per_doc: int = 1,
    judges: JudgeSuite | None = None,
    config: PipelineConfig | None = None,
    log: CallLog | None = None,
) -> ExperimentResult:
    """Offline end-to-end comparison of the two modes on a generated corpus.

    Stages: (1) generate the template corpus, (2) generate the QAC dataset,
    (3) chunk and embed into an index, (4) answer every record with the
    hierarchical pipeline (oracle routing: the correct document per record)
    and with the naive pipeline, (5) aggregate the metrics. Fully offline
    and deterministic for a given seed.
    """
    spec = corpus_spec or CorpusSpec(
        n_domains=10, collections_per_domain=3, docs_per_collection=2, seed=seed
    )
    registry, manifest = gen_corpus(spec)
    records = gen_qac(registry, per_doc, seed)
    judges = judges or JudgeSuite.offline()
    config = config or PipelineConfig()
    log = log if log is not None else CallLog()

    paths: dict[str, tuple[str, str, str]] = {}
    for record in records:
        doc = registry.document(record.source_document_id)
        collection = registry.collection(doc.collection_id)
        key = normalize_query(record.question)
        path = (collection.domain_id, collection.id, doc.id)
        if paths.get(key, path) != path:
            raise ValueError(f"ambiguous oracle route for query: {record.question!r}")
        paths[key] = path

    base = build_pipeline(config, registry=registry, log=log)
    dcd_pipeline = Pipeline(
        registry,
        base.index,
        RoleBackends(
            generator=offline_generator_backend(log),
            router=oracle_router_backend(paths, log),
            judge=offline_stream_judge_backend(log),
            embedder=base.backends.embedder,
        ),
        config,
    )
    naive_pipeline = Pipeline(
        registry,
        base.index,
        RoleBackends(
            generator=offline_generator_backend(log),
            router=offline_router_backend(log),  # unused in naive mode
            judge=offline_stream_judge_backend(log),
            embedder=base.backends.embedder,
        ),
        config,
    )

    dcd_report = run_eval(records, dcd_pipeline, judges, "dcd")
    naive_report = run_eval(records, naive_pipeline, judges, "naive")
    return ExperimentResult(
        dcd=dcd_report, naive=naive_report, records=records, manifest=manifest
    )

"""Acceptance gate: every release criterion, one test per criterion.

Each test prints one PASS line on success (run with ``pytest -s`` to see
them); a failed assertion is the FAIL signal. All criteria run fully
offline — criterion 1 additionally enforces that by disabling sockets for
its duration.
"""

from __future__ import annotations

import itertools
import json
import math
import random
import socket
import time
from contextlib import contextmanager

import pytest

from dcdrag.backends import CallLog, MockChatBackend
from dcdrag.chunking import ChunkParams, chunk_spans
from dcdrag.cli import cli_run
from dcdrag.errors import TransportError
from dcdrag.evalkit.generate import CorpusSpec
from dcdrag.evalkit.metrics import ArcVerdict, FaVerdict, RcsVerdict, aggregate
from dcdrag.evalkit.runner import run_experiment
from dcdrag.retrieval import RetrievalResult, fuse
from dcdrag.routing import route

from conftest import make_registry
from test_pipeline import build_test_pipeline


def _pass(criterion: int, message: str) -> None:
    print(f"ACCEPTANCE {criterion} PASS: {message}")


@contextmanager
def no_network():
    """Any attempt to open a socket fails the enclosing test."""

    def guard(*args, **kwargs):
        raise AssertionError("network access attempted during an offline criterion")

    original = socket.socket
    socket.socket = guard  # type: ignore[misc]
    try:
        yield
    finally:
        socket.socket = original  # type: ignore[misc]


class TestCriterion1DirectionalReproduction:
    def test_scaled_experiment_direction_and_gap(self):
        started = time.monotonic()
        with no_network():
            result = run_experiment(
                42,
                corpus_spec=CorpusSpec(
                    n_domains=10, collections_per_domain=3, docs_per_collection=2,
                    seed=42,
                ),
                per_doc=1,
            )
        elapsed = time.monotonic() - started
        rcs_dcd = result.dcd.aggregates.rcs
        rcs_naive = result.naive.aggregates.rcs
        assert rcs_dcd == pytest.approx(2.0, abs=0.0), (
            "routed scope must contain every reference fact by construction"
        )
        assert rcs_dcd - rcs_naive >= 0.3
        assert elapsed < 60.0
        _pass(
            1,
            f"RCS dcd={rcs_dcd:.2f} naive={rcs_naive:.2f} "
            f"gap={rcs_dcd - rcs_naive:.2f} in {elapsed:.1f}s offline",
        )


class TestCriterion2ChunkerOracle:
    @staticmethod
    def oracle(doc_len: int, window: int, overlap_fraction: float):
        overlap = math.ceil(overlap_fraction * window)
        stride = window - overlap
        n = 1 if doc_len <= window else 1 + math.ceil((doc_len - window) / stride)
        return [(i * stride, min(i * stride + window, doc_len)) for i in range(n)]

    def test_exhaustive_equivalence_and_canonical_case(self):
        canonical = chunk_spans(1000, ChunkParams(300, 0.20))
        assert canonical == [(0, 300), (240, 540), (480, 780), (720, 1000)]
        checked = 0
        for window in (50, 100, 300):
            for overlap in (0.05, 0.10, 0.20):
                params = ChunkParams(window, overlap)
                for doc_len in range(1, 2001):
                    assert chunk_spans(doc_len, params) == self.oracle(
                        doc_len, window, overlap
                    )
                    checked += 1
        _pass(2, f"{checked} span lists match the brute-force enumerator exactly")


class TestCriterion3MetricTruthTables:
    def test_truth_tables_aggregation_and_mapping(self):
        arc_passing = [
            combo
            for combo in itertools.product([False, True], repeat=4)
            if ArcVerdict(*combo).passed
        ]
        assert arc_passing == [(True, True, True, False)]
        for d, p, sp, v in itertools.product([False, True], repeat=4):
            assert ArcVerdict(d, p, sp, v).passed == (d and p and sp and not v)

        fa_passing = [
            combo
            for combo in itertools.product([False, True], repeat=3)
            if FaVerdict(*combo).passed
        ]
        assert fa_passing == [(True, False, False)]
        for s, c, h in itertools.product([False, True], repeat=3):
            assert FaVerdict(s, c, h).passed == (s and not c and not h)

        rng = random.Random(303)
        for _ in range(100):
            n = rng.randint(1, 60)
            arc = [rng.randint(0, 1) for _ in range(n)]
            cr = [rng.randint(0, 1) for _ in range(n)]
            fa = [rng.randint(0, 1) for _ in range(n)]
            rcs = [rng.randint(0, 2) for _ in range(n)]
            agg = aggregate(arc, cr, fa, rcs)
            assert abs(agg.sb_arc - sum(arc) / n) <= 1e-9
            assert abs(agg.sb_cr - sum(cr) / n) <= 1e-9
            assert abs(agg.sb_fa - sum(fa) / n) <= 1e-9
            assert abs(agg.rcs - sum(rcs) / n) <= 1e-9

        assert [RcsVerdict(c).score for c in ("none", "partial", "complete")] == [
            0, 1, 2,
        ]
        _pass(3, "16 ARC + 8 FA combinations, aggregation, and 0/1/2 mapping exact")


class TestCriterion4RouterTotalityFuzz:
    def test_thousand_adversarial_behaviours(self):
        registry = make_registry()
        fallback_path = tuple(x.id for x in registry.fallback_path())
        rng = random.Random(20240)
        all_failure_cases = 0
        for trial in range(1000):
            log = CallLog()
            always_fail = trial % 10 == 0
            produced_valid = []

            def rule(kind, request, _fail=always_fail):
                roll = rng.random()
                if _fail or roll < 0.30:
                    raise TransportError("synthetic outage")
                if roll < 0.55:
                    return "garbage that is not json"
                if roll < 0.75:
                    return json.dumps({"selected_id": "no_such_id", "reason": "x"})
                enum = request.json_schema["properties"]["selected_id"]["enum"]
                produced_valid.append(True)
                return json.dumps({"selected_id": rng.choice(enum), "reason": "ok"})

            backend = MockChatBackend(rule, log=log)
            trace = route(f"fuzz {trial}", registry, backend, max_retries=3)

            assert log.count(kind="structured") <= 3 * 3
            collection = registry.collection(trace.collection.chosen_id)
            document = registry.document(trace.document.chosen_id)
            assert collection.domain_id == trace.domain.chosen_id
            assert document.collection_id == trace.collection.chosen_id
            if not produced_valid:
                all_failure_cases += 1
                assert trace.path() == fallback_path
        assert all_failure_cases >= 100
        _pass(
            4,
            f"1000 adversarial traces valid; {all_failure_cases} all-failure "
            f"cases all landed on the fallback path",
        )


class TestCriterion5GuardrailIsolation:
    def test_prequery_isolation_and_stream_blocking(self):
        pipeline, log = build_test_pipeline()
        baseline = len(log)
        phrases = ["weapon", "explosive"]
        for i in range(100):
            query = f"question {i} about a {phrases[i % 2]} please"
            outcome = pipeline.answer_query_dcd(query)
            assert outcome.blocked
        assert len(log) == baseline, "blocked queries must trigger zero backend calls"

        judge = MockChatBackend(
            [json.dumps({"allowed": False, "reason": "deviates from context"})],
            role="judge",
        )
        blocked_pipeline, _ = build_test_pipeline(judge=judge)
        events = list(blocked_pipeline.stream_query("tok-d1-0-0-1 fine", mode="naive"))
        tokens = [payload for kind, payload in events if kind == "token"]
        outcome = next(payload for kind, payload in events if kind == "outcome")
        assert tokens == [blocked_pipeline.refusal_notice]
        assert outcome.blocked
        stream_verdict = outcome.guardrail_verdicts[-1]
        assert stream_verdict.stage == "stream"
        assert stream_verdict.tokens_inspected <= 150
        _pass(
            5,
            "100 stop-worded queries made zero backend calls; stream block "
            "delivered zero answer tokens",
        )


class TestCriterion6Determinism:
    def strip_timings(self, path):
        report = json.loads(path.read_text())
        report.pop("operational", None)
        for record in report["records"]:
            record.pop("end_to_end_ms", None)
            record.pop("time_to_first_token_ms", None)
        return json.dumps(report, sort_keys=True).encode()

    def test_two_reproduce_runs_byte_identical(self, tmp_path):
        out1, out2 = tmp_path / "one", tmp_path / "two"
        assert cli_run(["reproduce", "--seed", "42", "--judge", "mock",
                        "--out", str(out1)]) == 0
        assert cli_run(["reproduce", "--seed", "42", "--judge", "mock",
                        "--out", str(out2)]) == 0
        for name in ("report_dcd.json", "report_naive.json"):
            assert self.strip_timings(out1 / name) == self.strip_timings(out2 / name)
        assert (out1 / "manifest.json").read_bytes() == (
            out2 / "manifest.json"
        ).read_bytes()
        assert (out1 / "dataset.jsonl").read_bytes() == (
            out2 / "dataset.jsonl"
        ).read_bytes()
        _pass(6, "two reproduce runs byte-identical with timings excluded")


class TestCriterion7CacheBehaviour:
    def test_repeat_query_cached_at_every_level(self):
        pipeline, log = build_test_pipeline()
        query = "tok-d1-0-0-4 what is the policy"
        pipeline.answer_query_dcd(query)
        calls_after_first = log.count(role="router", kind="structured")
        outcome = pipeline.answer_query_dcd(query)
        trace = outcome.routing_trace
        assert trace.domain.from_cache
        assert trace.collection.from_cache
        assert trace.document.from_cache
        assert log.count(role="router", kind="structured") == calls_after_first
        _pass(7, "identical query served from cache at all three levels, "
                 "zero extra router calls")


class TestCriterion8RrfRankInvariance:
    def test_cubic_transform_preserves_fused_order(self):
        rng = random.Random(8080)
        fixtures = 0
        for _ in range(100):
            ids = [f"c{i}" for i in range(rng.randint(2, 15))]
            dense_ids = rng.sample(ids, rng.randint(1, len(ids)))
            lex_ids = rng.sample(ids, rng.randint(0, len(ids)))
            dense_scores = sorted((rng.uniform(-1, 1) for _ in dense_ids),
                                  reverse=True)
            lex_scores = sorted((rng.uniform(0, 10) for _ in lex_ids), reverse=True)
            dense = [
                RetrievalResult(chunk_id=cid, dense_score=s, rank=i + 1)
                for i, (cid, s) in enumerate(zip(dense_ids, dense_scores))
            ]
            lexical = [
                RetrievalResult(chunk_id=cid, lexical_score=s, rank=i + 1)
                for i, (cid, s) in enumerate(zip(lex_ids, lex_scores))
            ]
            baseline_order = [r.chunk_id for r in fuse(dense, lexical)]
            transformed = [
                RetrievalResult(
                    chunk_id=r.chunk_id,
                    dense_score=r.dense_score**3 + 7,
                    rank=r.rank,
                )
                for r in dense
            ]
            assert [r.chunk_id for r in fuse(transformed, lexical)] == baseline_order
            fixtures += 1
        assert fixtures == 100
        _pass(8, "fused order invariant under x^3+7 on dense scores, "
                 "100/100 fixtures")


class TestCriterion9EndToEndOffline:
    def test_reproduce_populates_everything(self, tmp_path):
        out = tmp_path / "rep"
        assert cli_run(["reproduce", "--seed", "42", "--judge", "mock",
                        "--out", str(out)]) == 0
        reports = {}
        for mode in ("dcd", "naive"):
            report = json.loads((out / f"report_{mode}.json").read_text())
            reports[mode] = report
            assert report["n"] == 60
            assert 0.0 <= report["sb_arc"] <= 1.0
            assert 0.0 <= report["sb_cr"] <= 1.0
            assert 0.0 <= report["sb_fa"] <= 1.0
            assert 0.0 <= report["rcs"] <= 2.0
            assert report["excluded_count"] == 0
            ops = report["operational"]
            assert ops["total_eval_time_s"] > 0
            assert ops["mean_end_to_end_ms"] >= 0
            assert ops["mean_ttft_ms"] >= 0
        _pass(
            9,
            f"60-record run complete in both modes; aggregates "
            f"(dcd rcs {reports['dcd']['rcs']:.2f}, naive rcs "
            f"{reports['naive']['rcs']:.2f}), exclusions 0, timings present",
        )

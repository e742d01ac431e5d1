from __future__ import annotations

import json

import pytest

from dcdrag.config import PipelineConfig
from dcdrag.errors import EmptyDatasetError, JudgeError
from dcdrag.evalkit.generate import CorpusSpec, EvalRecord, gen_corpus, gen_qac
from dcdrag.evalkit.judges import MechanicalRcsJudge, heuristic_arc, heuristic_cr, heuristic_fa
from dcdrag.evalkit.runner import (
    EvalReport,
    JudgeSuite,
    comparison_table,
    run_eval,
    run_experiment,
)
from dcdrag.pipeline import build_pipeline


@pytest.fixture(scope="module")
def small_corpus():
    reg, _ = gen_corpus(CorpusSpec(3, 2, 2, seed=11))
    records = gen_qac(reg, 1, seed=11)
    return reg, records


@pytest.fixture(scope="module")
def small_pipeline(small_corpus):
    reg, _ = small_corpus
    return build_pipeline(PipelineConfig(), registry=reg)


def strip_timings(report: EvalReport) -> str:
    return json.dumps(report.to_dict(include_timings=False), sort_keys=True)


class TestRunEval:
    def test_fifty_record_dataset_all_mock(self):
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        records = gen_qac(reg, 1, seed=42)[:50]
        pipeline = build_pipeline(PipelineConfig(), registry=reg)
        report = run_eval(records, pipeline, JudgeSuite.offline(), "naive")
        assert report.aggregates.n == 50
        assert 0.0 <= report.aggregates.sb_arc <= 1.0
        assert 0.0 <= report.aggregates.sb_cr <= 1.0
        assert 0.0 <= report.aggregates.sb_fa <= 1.0
        assert 0.0 <= report.aggregates.rcs <= 2.0
        assert report.excluded_count == 0
        assert len(report.records) == 50

    def test_two_runs_identical_modulo_timings(self, small_corpus, small_pipeline):
        _, records = small_corpus
        suite = JudgeSuite.offline()
        r1 = run_eval(records, small_pipeline, suite, "dcd")
        r2 = run_eval(records, small_pipeline, suite, "dcd")
        assert strip_timings(r1) == strip_timings(r2)

    def test_parallel_equals_serial(self, small_corpus, small_pipeline):
        _, records = small_corpus
        suite = JudgeSuite.offline()
        serial = run_eval(records, small_pipeline, suite, "naive", parallelism=1)
        parallel = run_eval(records, small_pipeline, suite, "naive", parallelism=4)
        assert strip_timings(serial) == strip_timings(parallel)

    def test_judge_failure_excludes_with_count(self, small_corpus, small_pipeline):
        reg, records = small_corpus
        poisoned_question = records[0].question

        def flaky_arc(question, answer):
            if question == poisoned_question:
                raise JudgeError("scripted failure")
            return heuristic_arc(question, answer)

        suite = JudgeSuite(
            arc=flaky_arc,
            cr=heuristic_cr,
            fa=heuristic_fa,
            rcs=MechanicalRcsJudge(),
        )
        report = run_eval(records, small_pipeline, suite, "naive")
        assert report.excluded_count == 1
        assert report.aggregates.n == len(records) - 1
        excluded = [r for r in report.records if r.excluded]
        assert len(excluded) == 1
        assert excluded[0].question == poisoned_question
        assert "scripted failure" in excluded[0].error

    def test_blocked_record_scores_zero_with_count(self, small_corpus, small_pipeline):
        reg, records = small_corpus
        blocked_record = EvalRecord(
            question="is there a weapon room here",
            reference_answer="none",
            reference_context="No such sentence exists.",
            source_document_id=reg.documents[0].id,
        )
        report = run_eval(
            [records[0], blocked_record], small_pipeline, JudgeSuite.offline(), "naive"
        )
        assert report.blocked_count == 1
        assert report.aggregates.n == 2
        blocked_eval = report.records[1]
        assert blocked_eval.blocked
        assert blocked_eval.arc is None
        # The blocked record contributes zeros to every aggregate.
        solo = run_eval([records[0]], small_pipeline, JudgeSuite.offline(), "naive")
        assert report.aggregates.rcs == pytest.approx(solo.aggregates.rcs / 2)

    def test_empty_dataset_rejected(self, small_pipeline):
        with pytest.raises(EmptyDatasetError):
            run_eval([], small_pipeline, JudgeSuite.offline(), "dcd")

    def test_operational_metrics_present(self, small_corpus, small_pipeline):
        _, records = small_corpus
        report = run_eval(records[:4], small_pipeline, JudgeSuite.offline(), "naive")
        ops = report.operational
        assert ops["total_eval_time_s"] > 0
        assert ops["mean_end_to_end_ms"] >= 0
        assert ops["mean_ttft_ms"] >= 0
        assert ops["mean_ttft_ms"] <= ops["mean_end_to_end_ms"] + 1e-6


class TestReportShape:
    def test_to_dict_serializes(self, small_corpus, small_pipeline):
        _, records = small_corpus
        report = run_eval(records[:3], small_pipeline, JudgeSuite.offline(), "dcd")
        payload = report.to_dict()
        text = json.dumps(payload, sort_keys=True)
        parsed = json.loads(text)
        assert parsed["mode"] == "dcd"
        assert parsed["n"] == 3
        assert len(parsed["records"]) == 3
        record = parsed["records"][0]
        assert {"arc", "cr", "fa", "rcs", "answer", "blocked"} <= set(record)
        assert "passed" in record["arc"]
        assert "score" in record["rcs"]
        assert "operational" in parsed

    def test_comparison_table_mirrors_metric_rows(self, small_corpus, small_pipeline):
        _, records = small_corpus
        report = run_eval(records[:3], small_pipeline, JudgeSuite.offline(), "dcd")
        table = comparison_table(report, report)
        assert "Strict Binary Answer Relevance" in table
        assert "Strict Binary Context Recall" in table
        assert "Strict Binary Factual Accuracy" in table
        assert "Retrieval Coverage Score" in table
        assert "DCD" in table and "Naive" in table


class TestRunExperiment:
    def test_scaled_experiment_shape(self):
        result = run_experiment(
            7, corpus_spec=CorpusSpec(3, 2, 2, seed=7), per_doc=1
        )
        assert result.dcd.mode == "dcd"
        assert result.naive.mode == "naive"
        assert result.dcd.aggregates.n == 12
        assert len(result.records) == 12
        assert result.manifest["domains"]

    def test_oracle_routing_gives_full_coverage(self):
        result = run_experiment(7, corpus_spec=CorpusSpec(3, 2, 2, seed=7))
        assert result.dcd.aggregates.rcs == pytest.approx(2.0)

    def test_experiment_deterministic(self):
        a = run_experiment(13, corpus_spec=CorpusSpec(2, 2, 2, seed=13))
        b = run_experiment(13, corpus_spec=CorpusSpec(2, 2, 2, seed=13))
        assert strip_timings(a.dcd) == strip_timings(b.dcd)
        assert strip_timings(a.naive) == strip_timings(b.naive)

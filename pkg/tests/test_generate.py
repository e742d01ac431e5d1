from __future__ import annotations

import pytest

from dcdrag.chunking import ChunkParams, chunk_corpus, tokenize
from dcdrag.corpus import validate_registry
from dcdrag.evalkit.generate import (
    CorpusSpec,
    document_facts,
    gen_corpus,
    gen_qac,
    load_records,
    save_records,
)


class TestGenCorpus:
    def test_counts_10_3_2(self):
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        assert len(reg.domains) == 10
        assert len(reg.collections) == 30
        assert len(reg.documents) == 60
        assert validate_registry(reg) == []

    def test_minimal_1_1_1(self):
        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=0))
        assert validate_registry(reg) == []
        assert len(reg.documents) == 1

    def test_same_seed_identical_manifests(self):
        _, m1 = gen_corpus(CorpusSpec(4, 2, 2, seed=9))
        _, m2 = gen_corpus(CorpusSpec(4, 2, 2, seed=9))
        assert m1 == m2

    def test_different_seed_differs(self):
        _, m1 = gen_corpus(CorpusSpec(4, 2, 2, seed=9))
        _, m2 = gen_corpus(CorpusSpec(4, 2, 2, seed=10))
        assert m1 != m2

    def test_bodies_exactly_thousand_tokens(self):
        reg, _ = gen_corpus(CorpusSpec(3, 3, 2, seed=1))
        assert all(len(tokenize(d.body)) == 1000 for d in reg.documents)

    def test_counts_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            CorpusSpec(0, 1, 1, seed=1)

    def test_template_overlap_across_domains(self):
        # Same-kind documents of different domains must be near-identical:
        # that is the high-contextual-overlap regime the generator exists for.
        reg, _ = gen_corpus(CorpusSpec(2, 1, 1, seed=5))
        a, b = reg.documents
        tokens_a, tokens_b = set(a.body.lower().split()), set(b.body.lower().split())
        jaccard = len(tokens_a & tokens_b) / len(tokens_a | tokens_b)
        assert jaccard > 0.8

    def test_within_document_chunks_stay_below_dedup_threshold(self):
        # Adjacent chunks of one document must NOT look like near-copies,
        # or deduplication would hollow out single-document retrieval.
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        chunks = chunk_corpus(reg, ChunkParams(300, 0.20))
        by_doc: dict[str, list] = {}
        for c in chunks:
            by_doc.setdefault(c.document_id, []).append(c)
        for doc_chunks in by_doc.values():
            for a, b in zip(doc_chunks, doc_chunks[1:]):
                sa, sb = set(a.text.lower().split()), set(b.text.lower().split())
                jaccard = len(sa & sb) / len(sa | sb)
                assert jaccard < 0.9

    def test_fallbacks_assigned_per_level(self):
        reg, _ = gen_corpus(CorpusSpec(3, 2, 2, seed=2))
        assert reg.domains[0].is_fallback
        for d in reg.domains:
            assert sum(
                c.is_fallback for c in reg.collections if c.domain_id == d.id
            ) == 1
        for c in reg.collections:
            assert sum(
                x.is_fallback for x in reg.documents if x.collection_id == c.id
            ) == 1

    def test_slot_values_globally_unique(self):
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        values_by_slot: dict[str, list[int]] = {}
        for doc in reg.documents:
            for template, value, _ in document_facts(doc):
                values_by_slot.setdefault(template.slot, []).append(value)
        for slot, values in values_by_slot.items():
            assert len(values) == len(set(values)), f"slot {slot} repeats a value"


class TestGenQac:
    def test_sixty_records_with_valid_sources(self):
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        records = gen_qac(reg, 1, seed=42)
        assert len(records) == 60
        doc_ids = {d.id for d in reg.documents}
        assert all(r.source_document_id in doc_ids for r in records)

    def test_answer_verbatim_in_context(self):
        reg, _ = gen_corpus(CorpusSpec(5, 2, 2, seed=3))
        for r in gen_qac(reg, 2, seed=3):
            assert r.reference_answer in r.reference_context

    def test_context_verbatim_in_document_body(self):
        reg, _ = gen_corpus(CorpusSpec(3, 2, 2, seed=4))
        for r in gen_qac(reg, 1, seed=4):
            assert r.reference_context in reg.document(r.source_document_id).body

    def test_same_seed_identical(self):
        reg, _ = gen_corpus(CorpusSpec(4, 2, 2, seed=6))
        assert gen_qac(reg, 1, seed=11) == gen_qac(reg, 1, seed=11)

    def test_questions_unique_across_records(self):
        reg, _ = gen_corpus(CorpusSpec(10, 3, 2, seed=42))
        records = gen_qac(reg, 1, seed=42)
        questions = [r.question for r in records]
        assert len(set(questions)) == len(questions)

    def test_question_names_complex_and_building(self):
        reg, _ = gen_corpus(CorpusSpec(2, 2, 1, seed=8))
        for r in gen_qac(reg, 1, seed=8):
            doc = reg.document(r.source_document_id)
            assert doc.metadata["complex"] in r.question
            assert doc.metadata["qualifier"] in r.question

    def test_per_doc_beyond_available_facts_rejected(self):
        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=1))
        with pytest.raises(ValueError, match="template facts"):
            gen_qac(reg, 100, seed=1)

    def test_per_doc_must_be_positive(self):
        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=1))
        with pytest.raises(ValueError):
            gen_qac(reg, 0, seed=1)


class TestLlmGeneration:
    def test_gen_qac_llm_with_scripted_model(self):
        import json

        from dcdrag.backends import MockChatBackend

        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=2))
        doc = reg.documents[0]
        _, value, sentence = document_facts(doc)[0]

        def rule(kind, request):
            return json.dumps(
                {
                    "items": [
                        {
                            "question": f"What about {doc.metadata['complex']}?",
                            "answer": str(value),
                            "context": sentence,
                        }
                    ]
                }
            )

        from dcdrag.evalkit.generate import gen_qac_llm

        records = gen_qac_llm(reg, 1, MockChatBackend(rule))
        assert len(records) == 1
        assert records[0].reference_context == sentence
        assert records[0].source_document_id == doc.id

    def test_gen_qac_llm_rejects_non_verbatim_context(self):
        import json

        from dcdrag.backends import MockChatBackend
        from dcdrag.evalkit.generate import gen_qac_llm

        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=2))
        backend = MockChatBackend(
            [
                json.dumps(
                    {
                        "items": [
                            {
                                "question": "q",
                                "answer": "a",
                                "context": "this sentence is not in the document",
                            }
                        ]
                    }
                )
            ]
        )
        with pytest.raises(ValueError, match="verbatim"):
            gen_qac_llm(reg, 1, backend)

    def test_gen_corpus_llm_replaces_bodies_only(self):
        from dcdrag.backends import MockChatBackend
        from dcdrag.evalkit.generate import gen_corpus_llm

        spec = CorpusSpec(1, 1, 1, seed=2)
        template_reg, _ = gen_corpus(spec)
        backend = MockChatBackend(
            lambda kind, req: "model written prose about the complex"
        )
        reg = gen_corpus_llm(spec, backend)
        assert reg.domains == template_reg.domains
        assert reg.documents[0].title == template_reg.documents[0].title
        assert reg.documents[0].body == "model written prose about the complex"
        assert validate_registry(reg) == []


class TestRecordIo:
    def test_empty_fields_rejected(self):
        from dcdrag.evalkit.generate import EvalRecord

        with pytest.raises(ValueError, match="reference_answer"):
            EvalRecord(
                question="q",
                reference_answer="",
                reference_context="c",
                source_document_id="d",
            )

    def test_jsonl_round_trip(self, tmp_path):
        reg, _ = gen_corpus(CorpusSpec(2, 2, 2, seed=5))
        records = gen_qac(reg, 1, seed=5)
        path = tmp_path / "dataset.jsonl"
        save_records(records, path)
        assert load_records(path) == records

    def test_missing_field_reported_with_line(self, tmp_path):
        path = tmp_path / "broken.jsonl"
        path.write_text('{"question": "only this"}\n', encoding="utf-8")
        with pytest.raises(ValueError, match=":1"):
            load_records(path)

    def test_blank_lines_skipped(self, tmp_path):
        reg, _ = gen_corpus(CorpusSpec(1, 1, 1, seed=5))
        records = gen_qac(reg, 1, seed=5)
        path = tmp_path / "dataset.jsonl"
        save_records(records, path)
        path.write_text(path.read_text() + "\n\n", encoding="utf-8")
        assert load_records(path) == records

from __future__ import annotations

import json
import random

from dcdrag.backends import CallLog, MockChatBackend
from dcdrag.corpus import children_of
from dcdrag.errors import TransportError
from dcdrag.routing import (
    RouterCache,
    RouterPrompts,
    candidate_digest,
    normalize_query,
    route,
    route_level,
)

from conftest import make_registry


def select(payload_id, reason="r"):
    return json.dumps({"selected_id": payload_id, "reason": reason})


class TestNormalizeQuery:
    def test_example(self):
        assert normalize_query("  What  Parking? ") == "what parking?"

    def test_idempotent(self):
        q = normalize_query("Mixed \t Case\nQuery")
        assert normalize_query(q) == q

    def test_tabs_collapse(self):
        assert normalize_query("A\tB") == "a b"


class TestRouteLevel:
    def test_valid_selection_first_attempt(self, small_registry):
        domains = children_of(small_registry, "domain")
        backend = MockChatBackend([select("d2")])
        decision = route_level("which domain?", "domain", domains, backend)
        assert decision.chosen_id == "d2"
        assert decision.attempts == 1
        assert decision.used_fallback is False
        assert decision.from_cache is False

    def test_three_malformed_attempts_fall_back(self, small_registry):
        domains = children_of(small_registry, "domain")
        backend = MockChatBackend(["garbage", "{broken", "also not json"])
        decision = route_level("q", "domain", domains, backend, max_retries=3)
        assert decision.chosen_id == "d1"  # the fallback domain
        assert decision.used_fallback is True
        assert decision.attempts == 3
        assert len(decision.raw_outputs) == 3

    def test_unknown_id_then_valid(self, small_registry):
        domains = children_of(small_registry, "domain")
        backend = MockChatBackend([select("unknown_id"), select("d1")])
        decision = route_level("q", "domain", domains, backend, max_retries=3)
        assert decision.chosen_id == "d1"
        assert decision.attempts == 2
        assert decision.used_fallback is False

    def test_transport_failures_count_as_attempts(self, small_registry):
        domains = children_of(small_registry, "domain")
        backend = MockChatBackend(
            [TransportError("down"), TransportError("still down"), select("d2")]
        )
        decision = route_level("q", "domain", domains, backend, max_retries=3)
        assert decision.chosen_id == "d2"
        assert decision.attempts == 3

    def test_validly_choosing_the_fallback_is_not_a_fallback(self, small_registry):
        domains = children_of(small_registry, "domain")
        backend = MockChatBackend([select("d1")])
        decision = route_level("q", "domain", domains, backend)
        assert decision.chosen_id == "d1"
        assert decision.used_fallback is False

    def test_never_exceeds_max_retries_calls(self, small_registry):
        domains = children_of(small_registry, "domain")
        log = CallLog()
        backend = MockChatBackend(["bad"] * 10, log=log)
        route_level("q", "domain", domains, backend, max_retries=3)
        assert log.count(kind="structured") == 3


class TestRoute:
    def test_all_garbage_lands_on_full_fallback_path(self, small_registry):
        backend = MockChatBackend(["junk"] * 9)
        trace = route("anything", small_registry, backend, max_retries=3)
        dom, col, doc = small_registry.fallback_path()
        assert trace.path() == (dom.id, col.id, doc.id)
        assert trace.domain.used_fallback
        assert trace.collection.used_fallback
        assert trace.document.used_fallback

    def test_scripted_path_is_parent_consistent(self, small_registry):
        backend = MockChatBackend(
            [select("d2"), select("d2-c2"), select("d2-c2-doc2")]
        )
        trace = route("q", small_registry, backend)
        assert trace.path() == ("d2", "d2-c2", "d2-c2-doc2")
        col = small_registry.collection(trace.collection.chosen_id)
        doc = small_registry.document(trace.document.chosen_id)
        assert col.domain_id == trace.domain.chosen_id
        assert doc.collection_id == trace.collection.chosen_id

    def test_repeat_query_served_from_cache_with_zero_calls(self, small_registry):
        log = CallLog()
        backend = MockChatBackend(
            [select("d2"), select("d2-c2"), select("d2-c2-doc2")], log=log
        )
        cache = RouterCache()
        first = route("Same Query", small_registry, backend, cache)
        calls_after_first = log.count(kind="structured")
        second = route("  same   query ", small_registry, backend, cache)
        assert calls_after_first == 3
        assert log.count(kind="structured") == 3  # zero additional backend calls
        assert second.domain.from_cache
        assert second.collection.from_cache
        assert second.document.from_cache
        assert second.domain.attempts == 0
        assert second.path() == first.path()
        assert second.domain.used_fallback == first.domain.used_fallback

    def test_cache_capacity_evicts_lru(self, small_registry):
        cache = RouterCache(capacity=2)
        backend = MockChatBackend(
            [select("d1"), select("d1-c1"), select("d1-c1-doc1")] * 10
        )
        route("query one", small_registry, backend, cache)
        assert len(cache) == 2  # domain decision evicted by the two newer levels

    def test_digest_sensitivity_forces_fresh_call(self, small_registry):
        import dataclasses

        log = CallLog()
        backend = MockChatBackend(
            [select("d2"), select("d2-c1"), select("d2-c1-doc1")] * 2, log=log
        )
        cache = RouterCache()
        route("q", small_registry, backend, cache)
        assert log.count(kind="structured") == 3

        domains = list(small_registry.domains)
        domains[1] = dataclasses.replace(domains[1], description="edited text")
        edited = dataclasses.replace(small_registry, domains=tuple(domains))
        route("q", edited, backend, cache)
        # Domain candidates changed -> fresh domain call; deeper levels did not.
        assert log.count(kind="structured") == 4


class TestCandidateDigest:
    def test_identity_field_changes_change_digest(self, small_registry):
        import dataclasses

        domains = children_of(small_registry, "domain")
        base = candidate_digest(domains)
        renamed = [dataclasses.replace(domains[0], id="dX")] + domains[1:]
        redescribed = [
            dataclasses.replace(domains[0], description="different")
        ] + domains[1:]
        assert candidate_digest(renamed) != base
        assert candidate_digest(redescribed) != base

    def test_order_matters(self, small_registry):
        domains = children_of(small_registry, "domain")
        assert candidate_digest(domains) != candidate_digest(domains[::-1])


def adversarial_backend(rng: random.Random, registry, log: CallLog):
    """A backend whose every response is drawn from hostile behaviours."""
    all_ids = [d.id for d in registry.domains] + [
        c.id for c in registry.collections
    ] + [d.id for d in registry.documents]

    def rule(kind, request):
        roll = rng.random()
        if roll < 0.25:
            raise TransportError("synthetic outage")
        if roll < 0.45:
            return "complete garbage, not even json"
        if roll < 0.60:
            return json.dumps({"unexpected": "shape"})
        if roll < 0.75:
            return select("id_that_does_not_exist")
        if roll < 0.85:
            return select(rng.choice(all_ids))  # often the wrong level
        enum = request.json_schema["properties"]["selected_id"]["enum"]
        return select(rng.choice(enum))

    return MockChatBackend(rule, log=log)


class TestTotalityFuzz:
    def test_hundred_adversarial_behaviours(self, small_registry):
        rng = random.Random(4242)
        for trial in range(100):
            log = CallLog()
            backend = adversarial_backend(rng, small_registry, log)
            trace = route(f"query {trial}", small_registry, backend, max_retries=3)
            assert log.count(kind="structured") <= 9
            col = small_registry.collection(trace.collection.chosen_id)
            doc = small_registry.document(trace.document.chosen_id)
            assert col.domain_id == trace.domain.chosen_id
            assert doc.collection_id == trace.collection.chosen_id


class TestRouterPrompts:
    def test_templates_render_candidates_and_query(self):
        prompts = RouterPrompts()
        reg = make_registry()
        text = prompts.render("domain", "where is parking?", list(reg.domains))
        assert "where is parking?" in text
        assert "- d1: domain 1" in text
        assert "subject area number 2" in text

    def test_document_candidates_use_title_and_metadata(self):
        prompts = RouterPrompts()
        reg = make_registry()
        docs = children_of(reg, "document", "d1-c1")
        text = prompts.render("document", "q", docs)
        assert "Document 1 of d1-c1" in text
        assert "index: 0" in text

    def test_custom_prompt_dir(self, tmp_path):
        for level in ("domain", "collection", "document"):
            (tmp_path / f"route_{level}.txt").write_text(
                "CUSTOM {query} || {candidates}", encoding="utf-8"
            )
        prompts = RouterPrompts(tmp_path)
        reg = make_registry()
        text = prompts.render("domain", "hello", list(reg.domains))
        assert text.startswith("CUSTOM hello")

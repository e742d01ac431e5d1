"""End-to-end query orchestration for both pipeline modes.

Both modes share one code path — pre-query screening, hybrid retrieval,
fusion, dedup, rerank, context assembly, streamed generation and stream
screening — and differ in exactly one respect: the hierarchical mode routes
the query first and retrieves only within the routed document, while the
naive baseline searches every chunk. That makes the two directly comparable
in experiments.

Timing is measured on delivered output: time to first token counts from
query receipt to the first fragment the client is allowed to see (the
guardrail buffer flush, or the refusal notice), end-to-end to the last.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterator

from .backends import (
    CallLog,
    ChatBackend,
    ChatMessage,
    EmbeddingBackend,
    HashedBagOfWordsEmbedder,
    MockChatBackend,
    OpenAIChatBackend,
    OpenAIEmbeddingBackend,
    with_retries,
)
from .chunking import chunk_corpus
from .config import BackendConfig, PipelineConfig
from .corpus import Registry, load_manifest
from .errors import BackendError, TransportError
from .guardrails import (
    DEFAULT_REFUSAL_NOTICE,
    GuardrailVerdict,
    StopwordDictionary,
    load_stopwords,
    screen_query,
    screen_stream,
)
from .mocks import (
    offline_generator_backend,
    offline_router_backend,
    offline_stream_judge_backend,
)
from .retrieval import (
    CORPUS_SCOPE,
    ChunkIndex,
    ContextBundle,
    Reranker,
    RetrievalResult,
    Scope,
    assemble_context,
    build_index,
    dedup,
    fuse,
    lexical_search,
    rerank,
    semantic_search,
)
from .routing import RouterCache, RouterPrompts, RoutingTrace, route

logger = logging.getLogger(__name__)

_GENERATE_PROMPT = Path(__file__).parent / "prompts" / "generate_answer.txt"


@dataclass(frozen=True)
class Timings:
    time_to_first_token_ms: float
    end_to_end_ms: float


class MeasuredStream:
    """Wraps a delivered-token stream and records its timings.

    ``receipt`` anchors the measurement at query receipt. When nothing is
    ever delivered, time-to-first-token equals end-to-end at the moment the
    stream is found exhausted.
    """

    def __init__(
        self,
        stream: Iterator[str],
        *,
        clock: Callable[[], float] = time.perf_counter,
        receipt: float | None = None,
    ):
        self._stream = stream
        self._clock = clock
        self.receipt = receipt if receipt is not None else clock()
        self._first: float | None = None
        self._last: float | None = None

    def __iter__(self) -> Iterator[str]:
        for token in self._stream:
            now = self._clock()
            if self._first is None:
                self._first = now
            self._last = now
            yield token

    def timings(self) -> Timings:
        end = self._last if self._last is not None else self._clock()
        first = self._first if self._first is not None else end
        return Timings(
            time_to_first_token_ms=max(0.0, (first - self.receipt) * 1000.0),
            end_to_end_ms=max(0.0, (end - self.receipt) * 1000.0),
        )


def measure(
    stream: Iterator[str],
    *,
    clock: Callable[[], float] = time.perf_counter,
    receipt: float | None = None,
) -> MeasuredStream:
    """Instrument a delivered-token stream for ttft / end-to-end timings."""
    return MeasuredStream(stream, clock=clock, receipt=receipt)


@dataclass(frozen=True)
class QueryOutcome:
    """Everything one query produced, including intermediate artifacts."""

    answer_text: str
    blocked: bool
    mode: str
    routing_trace: RoutingTrace | None
    retrieval_results: tuple[RetrievalResult, ...]
    context: ContextBundle | None
    guardrail_verdicts: tuple[GuardrailVerdict, ...]
    timings: Timings

    def to_dict(self, include_timings: bool = True) -> dict:
        data = asdict(self)
        if not include_timings:
            data.pop("timings")
        return data

    def to_json(self, include_timings: bool = True) -> str:
        return json.dumps(self.to_dict(include_timings), sort_keys=True,
                          ensure_ascii=False)


@dataclass
class RoleBackends:
    generator: ChatBackend
    router: ChatBackend
    judge: ChatBackend  # stream guardrail judge
    embedder: EmbeddingBackend


class Pipeline:
    """A shareable query engine over an immutable registry + index.

    Per-query state is local to each call, so concurrent queries are safe.
    ``config.mode`` only selects the default mode; both entry points remain
    callable on the same instance.
    """

    def __init__(
        self,
        registry: Registry,
        index: ChunkIndex,
        backends: RoleBackends,
        config: PipelineConfig,
        *,
        stopwords: StopwordDictionary | None = None,
        router_prompts: RouterPrompts | None = None,
        reranker: Reranker | None = None,
        clock: Callable[[], float] = time.perf_counter,
    ):
        self.registry = registry
        self.index = index
        self.backends = backends
        self.config = config
        self.stopwords = stopwords if stopwords is not None else load_stopwords(
            config.guardrails.base_stopwords_path,
            config.guardrails.custom_stopwords_path,
        )
        self.router_prompts = router_prompts or RouterPrompts(config.router.prompt_dir)
        self.reranker = reranker
        self.cache = RouterCache(config.router.cache_capacity)
        self.refusal_notice = config.guardrails.refusal_notice or DEFAULT_REFUSAL_NOTICE
        self._clock = clock
        self._generate_template = _GENERATE_PROMPT.read_text(encoding="utf-8")

    # -- public API ----------------------------------------------------------

    def answer_query_dcd(self, query: str) -> QueryOutcome:
        return self._collect(self.stream_query(query, mode="dcd"))

    def answer_query_naive(self, query: str) -> QueryOutcome:
        return self._collect(self.stream_query(query, mode="naive"))

    def answer_query(self, query: str, mode: str | None = None) -> QueryOutcome:
        return self._collect(self.stream_query(query, mode=mode))

    def stream_query(
        self, query: str, mode: str | None = None
    ) -> Iterator[tuple[str, object]]:
        """Yield ("token", str) events as output is delivered, then one
        ("outcome", QueryOutcome) event."""
        mode = mode or self.config.mode
        if mode not in ("dcd", "naive"):
            raise ValueError(f"mode must be dcd or naive, got {mode!r}")
        receipt = self._clock()
        verdicts: list[GuardrailVerdict] = []

        pre = screen_query(query, self.stopwords)
        verdicts.append(pre)
        if not pre.allowed:
            measured = measure(iter([self.refusal_notice]), clock=self._clock,
                               receipt=receipt)
            for token in measured:
                yield ("token", token)
            yield (
                "outcome",
                QueryOutcome(
                    answer_text=self.refusal_notice,
                    blocked=True,
                    mode=mode,
                    routing_trace=None,
                    retrieval_results=(),
                    context=None,
                    guardrail_verdicts=tuple(verdicts),
                    timings=measured.timings(),
                ),
            )
            return

        trace: RoutingTrace | None = None
        scope = CORPUS_SCOPE
        if mode == "dcd":
            trace = route(
                query,
                self.registry,
                self.backends.router,
                self.cache,
                max_retries=self.config.router.max_retries,
                prompts=self.router_prompts,
            )
            scope = Scope(document_id=trace.document.chosen_id)

        results, bundle = self._retrieve(query, scope)
        stream_verdict, screened = self._generate_screened(query, bundle)
        verdicts.append(stream_verdict)

        measured = measure(screened, clock=self._clock, receipt=receipt)
        delivered: list[str] = []
        try:
            for token in measured:
                delivered.append(token)
                yield ("token", token)
        except TransportError as exc:
            logger.warning("generation stream truncated mid-answer: %s", exc)

        blocked = not stream_verdict.allowed
        joiner = getattr(self.backends.generator, "token_joiner", "")
        answer = self.refusal_notice if blocked else joiner.join(delivered)
        yield (
            "outcome",
            QueryOutcome(
                answer_text=answer,
                blocked=blocked,
                mode=mode,
                routing_trace=trace,
                retrieval_results=tuple(results),
                context=bundle,
                guardrail_verdicts=tuple(verdicts),
                timings=measured.timings(),
            ),
        )

    # -- stages ---------------------------------------------------------------

    def _retrieve(
        self, query: str, scope: Scope
    ) -> tuple[list[RetrievalResult], ContextBundle]:
        gen = self.config.generation
        k = self.config.retrieval.k_per_list
        query_vec = with_retries(
            lambda: self.backends.embedder.embed([query]),
            retries=gen.retries,
            backoff_s=gen.backoff_s,
        )[0]
        dense = semantic_search(self.index, query_vec, scope, k)
        lexical = lexical_search(self.index, query, scope, k)
        fused = fuse(dense, lexical)
        deduped = dedup(fused, self.index)
        ranked = rerank(deduped, query, self.index, self.reranker)
        bundle = assemble_context(
            ranked, self.index, self.config.retrieval.context_budget_tokens
        )
        return ranked, bundle

    def _generate_screened(
        self, query: str, bundle: ContextBundle
    ) -> tuple[GuardrailVerdict, Iterator[str]]:
        gen = self.config.generation
        joiner = getattr(self.backends.generator, "token_joiner", "")
        messages = (
            ChatMessage(
                "system",
                self._generate_template.format(context=bundle.render() or "(empty)"),
            ),
            ChatMessage("user", query),
        )
        last_exc: Exception | None = None
        for attempt in range(gen.retries + 1):
            if attempt and gen.backoff_s > 0:
                time.sleep(gen.backoff_s * (2 ** (attempt - 1)))
            try:
                stream = self.backends.generator.chat_stream(messages, gen.temperature)
                return screen_stream(
                    query,
                    bundle,
                    stream,
                    self.backends.judge,
                    prefix_tokens=self.config.guardrails.stream_prefix_tokens,
                    refusal_notice=self.refusal_notice,
                    joiner=joiner,
                )
            except (TransportError, BackendError) as exc:
                # Nothing reached the client yet (failures inside the
                # inspection prefix propagate from screen_stream), so a clean
                # restart is safe.
                last_exc = exc
        raise BackendError(
            f"generation failed after {gen.retries + 1} attempts: {last_exc}"
        )

    def _collect(self, events: Iterator[tuple[str, object]]) -> QueryOutcome:
        outcome = None
        for kind, payload in events:
            if kind == "outcome":
                outcome = payload
        assert outcome is not None
        return outcome


def build_backend(role: str, cfg: BackendConfig, log: CallLog | None = None):
    """Construct one role backend from its config block."""
    if cfg.kind == "openai":
        if role == "embedder":
            return OpenAIEmbeddingBackend(
                cfg.base_url, cfg.model, api_key_env=cfg.api_key_env, role=role, log=log
            )
        return OpenAIChatBackend(
            cfg.base_url, cfg.model, api_key_env=cfg.api_key_env, role=role, log=log
        )
    if role == "embedder":
        return HashedBagOfWordsEmbedder(dim=cfg.dim, role=role, log=log)
    if cfg.script_path:
        # Script files are either one response list, or a map of role ->
        # response list shared by several backends.
        script = json.loads(Path(cfg.script_path).read_text(encoding="utf-8"))
        if isinstance(script, dict):
            script = script[role]
        return MockChatBackend(script, role=role, log=log)
    return {
        "generator": offline_generator_backend,
        "router": offline_router_backend,
        "judge": offline_stream_judge_backend,
    }[role](log)


def build_pipeline(
    config: PipelineConfig,
    *,
    registry: Registry | None = None,
    log: CallLog | None = None,
    clock: Callable[[], float] = time.perf_counter,
) -> Pipeline:
    """Load the manifest, chunk, embed, index, and wire all backends."""
    if registry is None:
        if not config.manifest_path:
            raise ValueError("config.manifest_path is required to build a pipeline")
        registry = load_manifest(config.manifest_path)
    backends = RoleBackends(
        generator=build_backend("generator", config.backend("generator"), log),
        router=build_backend("router", config.backend("router"), log),
        judge=build_backend("judge", config.backend("judge"), log),
        embedder=build_backend("embedder", config.backend("embedder"), log),
    )
    chunks = chunk_corpus(registry, config.chunking)
    index = build_index(
        chunks,
        backends.embedder,
        retries=config.generation.retries,
        backoff_s=config.generation.backoff_s,
    )
    return Pipeline(registry, index, backends, config, clock=clock)

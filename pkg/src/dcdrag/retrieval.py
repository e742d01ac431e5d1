"""Scoped hybrid retrieval over chunk embeddings and a lexical index.

The in-memory ``ChunkIndex`` holds, per chunk, its embedding vector, its
lowercased token counts for BM25 scoring, its hierarchy references and its
text. Search is exact (no approximate structures): corpora of tens of
documents do not warrant them, and the index type is the seam where a
persistent or ANN store could substitute.

The retrieval stages mirror one query path: dense and lexical top-k within a
hierarchy scope, reciprocal-rank fusion, near-duplicate removal, an explicit
(default identity) rerank stage and greedy context assembly under a token
budget.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from .backends import EmbeddingBackend, with_retries
from .chunking import Chunk, tokenize
from .errors import DimensionMismatchError, EmptyIndexError, UnknownIdError

RRF_K = 60
BM25_K1 = 1.2
BM25_B = 0.75
JACCARD_DEDUP_THRESHOLD = 0.9
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Scope:
    """Hierarchy filter: unset fields admit everything at that level."""

    domain_id: str | None = None
    collection_id: str | None = None
    document_id: str | None = None

    def admits(self, entry: "IndexEntry") -> bool:
        if self.domain_id is not None and entry.domain_id != self.domain_id:
            return False
        if self.collection_id is not None and entry.collection_id != self.collection_id:
            return False
        if self.document_id is not None and entry.document_id != self.document_id:
            return False
        return True


CORPUS_SCOPE = Scope()


@dataclass(frozen=True)
class IndexEntry:
    chunk_id: str
    document_id: str
    collection_id: str
    domain_id: str
    seq_index: int
    text: str
    title: str
    vector: np.ndarray
    token_counts: Counter
    n_tokens: int


@dataclass(frozen=True)
class RetrievalResult:
    """One ranked hit. Ranks are 1..n without gaps, ties by chunk_id."""

    chunk_id: str
    dense_score: float = 0.0
    lexical_score: float = 0.0
    fused_score: float = 0.0
    rank: int = 0


@dataclass(frozen=True)
class ContextSection:
    chunk_id: str
    text: str
    title: str
    ordinal: int
    n_tokens: int


@dataclass(frozen=True)
class ContextBundle:
    """Ordered chunk texts with source attributions, within a token budget."""

    sections: tuple[ContextSection, ...]
    total_tokens: int

    def render(self) -> str:
        blocks = [
            f"[source: {s.title}, part {s.ordinal + 1}]\n{s.text}" for s in self.sections
        ]
        return "\n\n".join(blocks)


class ChunkIndex:
    """Immutable-after-build index over chunks.

    Corpus statistics (document frequencies, average chunk length, entry
    count) are computed once over the whole index and reused by every scoped
    search, so a chunk scores identically regardless of scope.
    """

    def __init__(self, entries: Sequence[IndexEntry]):
        if not entries:
            raise EmptyIndexError("cannot build an index over zero chunks")
        dims = {e.vector.shape[0] for e in entries}
        if len(dims) != 1:
            raise DimensionMismatchError(f"mixed embedding dims: {sorted(dims)}")
        self.dim = dims.pop()
        self.entries: dict[str, IndexEntry] = {e.chunk_id: e for e in entries}
        self._order = [e.chunk_id for e in entries]
        self._matrix = np.stack([e.vector for e in entries]).astype(np.float64)
        norms = np.linalg.norm(self._matrix, axis=1)
        norms[norms == 0] = 1.0
        self._unit_matrix = self._matrix / norms[:, None]
        self.doc_freq: Counter = Counter()
        for e in entries:
            self.doc_freq.update(e.token_counts.keys())
        self.avg_len = sum(e.n_tokens for e in entries) / len(entries)

    def __len__(self) -> int:
        return len(self._order)

    def entry(self, chunk_id: str) -> IndexEntry:
        try:
            return self.entries[chunk_id]
        except KeyError:
            raise UnknownIdError(f"unknown chunk id: {chunk_id!r}") from None

    def scoped_rows(self, scope: Scope) -> list[int]:
        return [
            i for i, cid in enumerate(self._order) if scope.admits(self.entries[cid])
        ]

    def chunk_id_at(self, row: int) -> str:
        return self._order[row]

    def unit_matrix(self) -> np.ndarray:
        return self._unit_matrix

    # -- snapshot -----------------------------------------------------------

    def save(self, path: str | Path) -> None:
        """Write a JSON snapshot that round-trips exactly."""
        payload = {
            "version": SNAPSHOT_VERSION,
            "dim": self.dim,
            "entries": [
                {
                    "chunk_id": e.chunk_id,
                    "document_id": e.document_id,
                    "collection_id": e.collection_id,
                    "domain_id": e.domain_id,
                    "seq_index": e.seq_index,
                    "text": e.text,
                    "title": e.title,
                    "vector": [float(x) for x in e.vector],
                }
                for e in (self.entries[cid] for cid in self._order)
            ],
        }
        Path(path).write_text(json.dumps(payload), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "ChunkIndex":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported snapshot version: {payload.get('version')}")
        entries = []
        for e in payload["entries"]:
            tokens = [t.lower() for t in tokenize(e["text"])]
            entries.append(
                IndexEntry(
                    chunk_id=e["chunk_id"],
                    document_id=e["document_id"],
                    collection_id=e["collection_id"],
                    domain_id=e["domain_id"],
                    seq_index=e["seq_index"],
                    text=e["text"],
                    title=e["title"],
                    vector=np.asarray(e["vector"], dtype=np.float64),
                    token_counts=Counter(tokens),
                    n_tokens=len(tokens),
                )
            )
        return cls(entries)


def build_index(
    chunks: Sequence[Chunk],
    embedder: EmbeddingBackend,
    *,
    batch_size: int = 64,
    retries: int = 2,
    backoff_s: float = 0.1,
) -> ChunkIndex:
    """Embed all chunks (batched, retried) and assemble the index.

    Entries are assembled in chunk order regardless of how embedding batches
    complete, so the result is deterministic.
    """
    if not chunks:
        raise EmptyIndexError("cannot build an index over zero chunks")
    vectors: list[np.ndarray] = []
    for i in range(0, len(chunks), batch_size):
        batch = [c.text for c in chunks[i : i + batch_size]]
        vectors.extend(
            with_retries(lambda b=batch: embedder.embed(b), retries=retries,
                         backoff_s=backoff_s)
        )
    dims = {v.shape[0] for v in vectors}
    if len(dims) != 1:
        raise DimensionMismatchError(f"mixed embedding dims: {sorted(dims)}")
    entries = []
    for chunk, vec in zip(chunks, vectors):
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"non-finite embedding for chunk {chunk.id}")
        tokens = [t.lower() for t in tokenize(chunk.text)]
        entries.append(
            IndexEntry(
                chunk_id=chunk.id,
                document_id=chunk.document_id,
                collection_id=chunk.collection_id,
                domain_id=chunk.domain_id,
                seq_index=chunk.seq_index,
                text=chunk.text,
                title=str(chunk.position_meta.get("title", "")),
                vector=np.asarray(vec, dtype=np.float64),
                token_counts=Counter(tokens),
                n_tokens=len(tokens),
            )
        )
    return ChunkIndex(entries)


def _ranked(scored: list[tuple[str, float]], k: int, key: str) -> list[RetrievalResult]:
    scored.sort(key=lambda item: (-item[1], item[0]))
    out = []
    for rank, (cid, score) in enumerate(scored[:k], start=1):
        out.append(RetrievalResult(chunk_id=cid, rank=rank, **{key: score}))
    return out


def semantic_search(
    index: ChunkIndex, query_vec: np.ndarray, scope: Scope, k: int
) -> list[RetrievalResult]:
    """Top-k in-scope chunks by cosine similarity (scores in [-1, 1])."""
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dim,):
        raise DimensionMismatchError(
            f"query dim {query_vec.shape} does not match index dim {index.dim}"
        )
    rows = index.scoped_rows(scope)
    if not rows:
        return []
    qnorm = float(np.linalg.norm(query_vec))
    unit_q = query_vec / qnorm if qnorm > 0 else query_vec
    sims = index.unit_matrix()[rows] @ unit_q
    scored = [(index.chunk_id_at(r), float(s)) for r, s in zip(rows, sims)]
    return _ranked(scored, k, "dense_score")


def bm25_idf(n_chunks: int, doc_freq: int) -> float:
    # Nonnegative variant: +1 inside the log keeps every score >= 0.
    return math.log(1.0 + (n_chunks - doc_freq + 0.5) / (doc_freq + 0.5))


def lexical_search(
    index: ChunkIndex, query: str, scope: Scope, k: int
) -> list[RetrievalResult]:
    """Top-k in-scope chunks by BM25 (k1=1.2, b=0.75) over default tokens.

    Scores sum over distinct query terms; chunks scoring zero are omitted.
    """
    terms = sorted(set(t.lower() for t in tokenize(query)))
    if not terms:
        return []
    n = len(index)
    scored = []
    for row in index.scoped_rows(scope):
        entry = index.entry(index.chunk_id_at(row))
        score = 0.0
        for term in terms:
            tf = entry.token_counts.get(term, 0)
            if tf == 0:
                continue
            idf = bm25_idf(n, index.doc_freq[term])
            denom = tf + BM25_K1 * (1 - BM25_B + BM25_B * entry.n_tokens / index.avg_len)
            score += idf * tf * (BM25_K1 + 1) / denom
        if score > 0:
            scored.append((entry.chunk_id, score))
    return _ranked(scored, k, "lexical_score")


def fuse(
    dense: Sequence[RetrievalResult],
    lexical: Sequence[RetrievalResult],
    *,
    rrf_k: int = RRF_K,
) -> list[RetrievalResult]:
    """Reciprocal-rank fusion of the two ranked lists.

    fused_score(c) = sum over lists containing c of 1 / (rrf_k + rank).
    Only the ranks matter, so the fused order is invariant under any
    strictly increasing transform of the input scores.
    """
    fused: dict[str, float] = {}
    dense_scores: dict[str, float] = {}
    lexical_scores: dict[str, float] = {}
    for r in dense:
        fused[r.chunk_id] = fused.get(r.chunk_id, 0.0) + 1.0 / (rrf_k + r.rank)
        dense_scores[r.chunk_id] = r.dense_score
    for r in lexical:
        fused[r.chunk_id] = fused.get(r.chunk_id, 0.0) + 1.0 / (rrf_k + r.rank)
        lexical_scores[r.chunk_id] = r.lexical_score
    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))
    return [
        RetrievalResult(
            chunk_id=cid,
            dense_score=dense_scores.get(cid, 0.0),
            lexical_score=lexical_scores.get(cid, 0.0),
            fused_score=score,
            rank=rank,
        )
        for rank, (cid, score) in enumerate(ordered, start=1)
    ]


def _normalized_text(text: str) -> str:
    return " ".join(text.lower().split())


def _jaccard(a: set, b: set) -> float:
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def dedup(
    results: Sequence[RetrievalResult],
    index: ChunkIndex,
    *,
    jaccard_threshold: float = JACCARD_DEDUP_THRESHOLD,
) -> list[RetrievalResult]:
    """Drop exact and near-duplicate texts of higher-ranked results.

    A result is removed when its normalized text equals a kept result's, or
    when its token-set Jaccard similarity against any kept result reaches
    the threshold. Otherwise order is preserved; ranks are reassigned 1..n.
    Idempotent by construction.
    """
    kept: list[RetrievalResult] = []
    kept_norms: list[str] = []
    kept_tokens: list[set[str]] = []
    for r in results:
        text = index.entry(r.chunk_id).text
        norm = _normalized_text(text)
        tokens = set(norm.split())
        duplicate = any(norm == n for n in kept_norms) or any(
            _jaccard(tokens, t) >= jaccard_threshold for t in kept_tokens
        )
        if duplicate:
            continue
        kept.append(r)
        kept_norms.append(norm)
        kept_tokens.append(tokens)
    return [replace(r, rank=i) for i, r in enumerate(kept, start=1)]


class Reranker(Protocol):
    """Scores candidate texts for a query; higher is better."""

    def score(self, query: str, texts: Sequence[str]) -> list[float]: ...


class LlmReranker:
    """Backend-scored rerank strategy: one structured call per result list."""

    def __init__(self, backend, *, temperature: float = 0.0):
        self.backend = backend
        self.temperature = temperature

    def score(self, query: str, texts: Sequence[str]) -> list[float]:
        from .backends import ChatMessage, StructuredRequest

        numbered = "\n\n".join(f"[{i}] {t}" for i, t in enumerate(texts))
        schema = {
            "type": "object",
            "properties": {
                "scores": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": len(texts),
                    "maxItems": len(texts),
                }
            },
            "required": ["scores"],
            "additionalProperties": False,
        }
        req = StructuredRequest(
            messages=(
                ChatMessage(
                    "system",
                    "Score each numbered passage for how well it answers the "
                    "query. Reply with a JSON object {\"scores\": [...]} giving "
                    "one number per passage, in order; higher means more relevant.",
                ),
                ChatMessage("user", f"QUERY:\n{query}\n\nPASSAGES:\n{numbered}"),
            ),
            json_schema=schema,
            temperature=self.temperature,
            schema_name="rerank_scores",
        )
        return [float(s) for s in self.backend.chat_structured(req)["scores"]]


def rerank(
    results: Sequence[RetrievalResult],
    query: str,
    index: ChunkIndex,
    strategy: Reranker | None = None,
) -> list[RetrievalResult]:
    """Reorder results by a strategy; the default keeps the fused order.

    Output is always a permutation of the input: strategies supply scores,
    reordering sorts by score (ties keep the incoming order), and ranks are
    reassigned 1..n.
    """
    if strategy is None or not results:
        return list(results)
    texts = [index.entry(r.chunk_id).text for r in results]
    scores = strategy.score(query, texts)
    if len(scores) != len(results):
        raise ValueError("reranker returned wrong number of scores")
    order = sorted(range(len(results)), key=lambda i: (-scores[i], i))
    return [replace(results[i], rank=rank) for rank, i in enumerate(order, start=1)]


def assemble_context(
    results: Sequence[RetrievalResult], index: ChunkIndex, budget_tokens: int
) -> ContextBundle:
    """Greedily pack results into a context bundle under the token budget.

    Results are taken in rank order; any chunk that would overflow the
    budget is skipped (later, smaller chunks may still fit).
    """
    if budget_tokens < 1:
        raise ValueError("budget_tokens must be >= 1")
    sections = []
    total = 0
    for r in results:
        entry = index.entry(r.chunk_id)
        if total + entry.n_tokens > budget_tokens:
            continue
        sections.append(
            ContextSection(
                chunk_id=entry.chunk_id,
                text=entry.text,
                title=entry.title,
                ordinal=entry.seq_index,
                n_tokens=entry.n_tokens,
            )
        )
        total += entry.n_tokens
    return ContextBundle(sections=tuple(sections), total_tokens=total)

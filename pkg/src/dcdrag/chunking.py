"""Sliding token-window chunking with hierarchy metadata.

Documents are split into fixed-size token windows that overlap their
neighbours by a configurable fraction. Every chunk carries references to its
document, collection and domain plus positional metadata (ordinal, total
count, document title), so downstream retrieval can filter by any hierarchy
level and attribute sources.

Window arithmetic: with ``window`` tokens per chunk and overlap fraction
``f``, consecutive chunk starts differ by ``stride = window - ceil(f *
window)``. Emission stops as soon as a chunk's end reaches the document end,
which prevents a trailing chunk fully contained in its predecessor. The last
chunk may therefore overlap its neighbour by more than ``ceil(f * window)``
tokens; every other adjacent pair overlaps exactly that many.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

from .corpus import DocumentDescriptor, Registry
from .errors import EmptyDocumentError

Tokenizer = Callable[[str], list[str]]


def tokenize(text: str) -> list[str]:
    """Default tokenizer: whitespace-delimited tokens.

    Deterministic, and joining the tokens with single spaces reconstructs
    the whitespace-normalized text. Any callable with the same signature can
    replace it where a model-specific tokenizer matters.
    """
    return text.split()


@dataclass(frozen=True)
class ChunkParams:
    """Window size and overlap for the sliding-window splitter."""

    window_tokens: int = 300
    overlap_fraction: float = 0.20

    def __post_init__(self):
        if self.window_tokens < 1:
            raise ValueError("window_tokens must be >= 1")
        if not 0.0 <= self.overlap_fraction < 0.5:
            raise ValueError("overlap_fraction must be in [0, 0.5)")
        if self.stride < 1:
            raise ValueError("stride must be >= 1 (overlap too large for window)")

    @property
    def overlap_tokens(self) -> int:
        return math.ceil(self.overlap_fraction * self.window_tokens)

    @property
    def stride(self) -> int:
        return self.window_tokens - self.overlap_tokens


@dataclass(frozen=True)
class Chunk:
    """One overlapping window of a document, with hierarchy metadata."""

    id: str
    document_id: str
    collection_id: str
    domain_id: str
    seq_index: int
    token_span: tuple[int, int]  # half-open [start, end) token offsets
    text: str
    position_meta: dict = field(default_factory=dict)


def chunk_spans(doc_len: int, params: ChunkParams) -> list[tuple[int, int]]:
    """Token spans for a document of ``doc_len`` tokens, in order."""
    if doc_len < 1:
        raise EmptyDocumentError("document has no tokens")
    spans = []
    start = 0
    while True:
        end = min(start + params.window_tokens, doc_len)
        spans.append((start, end))
        if end >= doc_len:
            return spans
        start += params.stride


def chunk_document(
    doc: DocumentDescriptor,
    params: ChunkParams,
    *,
    domain_id: str = "",
    tokenizer: Tokenizer = tokenize,
) -> list[Chunk]:
    """Split one document into overlapping chunks.

    Chunk text is the token slice re-joined with single spaces (offsets are
    token-based, so the text is whitespace-normalized). Raises
    EmptyDocumentError when the body tokenizes to nothing.
    """
    tokens = tokenizer(doc.body)
    if not tokens:
        raise EmptyDocumentError(doc.id)
    spans = chunk_spans(len(tokens), params)
    total = len(spans)
    chunks = []
    for i, (start, end) in enumerate(spans):
        chunks.append(
            Chunk(
                id=f"{doc.id}#{i}",
                document_id=doc.id,
                collection_id=doc.collection_id,
                domain_id=domain_id,
                seq_index=i,
                token_span=(start, end),
                text=" ".join(tokens[start:end]),
                position_meta={"ordinal": i, "total_chunks": total, "title": doc.title},
            )
        )
    return chunks


def chunk_corpus(
    reg: Registry, params: ChunkParams, *, tokenizer: Tokenizer = tokenize
) -> list[Chunk]:
    """Chunk every document of the registry, in manifest order."""
    out: list[Chunk] = []
    for doc in reg.documents:
        domain_id = reg.collection(doc.collection_id).domain_id
        try:
            out.extend(
                chunk_document(doc, params, domain_id=domain_id, tokenizer=tokenizer)
            )
        except EmptyDocumentError:
            raise EmptyDocumentError(f"{domain_id}/{doc.id}") from None
    return out

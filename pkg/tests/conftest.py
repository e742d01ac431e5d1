from __future__ import annotations

import json
from pathlib import Path

import pytest

from dcdrag.backends import CallLog, HashedBagOfWordsEmbedder
from dcdrag.chunking import Chunk
from dcdrag.corpus import (
    CollectionDescriptor,
    DocumentDescriptor,
    DomainDescriptor,
    Registry,
)
from dcdrag.retrieval import build_index


def make_registry(
    n_domains: int = 2,
    collections_per_domain: int = 2,
    docs_per_collection: int = 2,
    body_tokens: int = 40,
) -> Registry:
    """Small hand-rolled registry with distinct, deterministic bodies."""
    domains, collections, documents = [], [], []
    for di in range(n_domains):
        d_id = f"d{di + 1}"
        domains.append(
            DomainDescriptor(
                id=d_id,
                name=f"domain {di + 1}",
                description=f"subject area number {di + 1} with its own topics",
                is_fallback=(di == 0),
            )
        )
        for ci in range(collections_per_domain):
            c_id = f"{d_id}-c{ci + 1}"
            collections.append(
                CollectionDescriptor(
                    id=c_id,
                    domain_id=d_id,
                    name=f"collection {ci + 1} of {d_id}",
                    description=f"thematic slice {ci + 1} inside {d_id}",
                    is_fallback=(ci == 0),
                )
            )
            for ki in range(docs_per_collection):
                doc_id = f"{c_id}-doc{ki + 1}"
                body = " ".join(
                    f"tok-{d_id}-{ci}-{ki}-{t}" for t in range(body_tokens)
                )
                documents.append(
                    DocumentDescriptor(
                        id=doc_id,
                        collection_id=c_id,
                        title=f"Document {ki + 1} of {c_id}",
                        body=body,
                        metadata={"index": str(ki)},
                        is_fallback=(ki == 0),
                    )
                )
    return Registry(
        domains=tuple(domains),
        collections=tuple(collections),
        documents=tuple(documents),
    )


def make_chunks(
    texts: list[str],
    *,
    document_id: str = "d1-c1-doc1",
    collection_id: str = "d1-c1",
    domain_id: str = "d1",
    title: str = "Fixture document",
) -> list[Chunk]:
    chunks = []
    for i, text in enumerate(texts):
        n = len(text.split())
        chunks.append(
            Chunk(
                id=f"{document_id}#{i}",
                document_id=document_id,
                collection_id=collection_id,
                domain_id=domain_id,
                seq_index=i,
                token_span=(0, n),
                text=text,
                position_meta={"ordinal": i, "total_chunks": len(texts),
                               "title": title},
            )
        )
    return chunks


def index_from_texts(texts: list[str], *, dim: int = 64, log: CallLog | None = None,
                     **chunk_kwargs):
    chunks = make_chunks(texts, **chunk_kwargs)
    embedder = HashedBagOfWordsEmbedder(dim=dim, log=log)
    return build_index(chunks, embedder, backoff_s=0.0), embedder


@pytest.fixture
def small_registry() -> Registry:
    return make_registry()


@pytest.fixture
def manifest_path(tmp_path: Path, small_registry: Registry) -> Path:
    from dcdrag.corpus import serialize_manifest

    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(serialize_manifest(small_registry)), encoding="utf-8")
    return path

"""Hierarchy-routed retrieval-augmented generation.

Knowledge is organized as domains > collections > documents; queries are
routed top-down through that hierarchy by structured model selections before
any retrieval happens, so search and generation operate inside one document
instead of the whole corpus. A naive flat-retrieval mode shares the rest of
the pipeline for controlled comparison, and an evaluation kit scores both
with strict-binary metrics plus a retrieval-coverage score.
"""

from .chunking import Chunk, ChunkParams, chunk_corpus, chunk_document, tokenize
from .config import PipelineConfig, ServiceConfig
from .corpus import (
    CollectionDescriptor,
    DocumentDescriptor,
    DomainDescriptor,
    Registry,
    children_of,
    load_manifest,
    serialize_manifest,
    validate_registry,
)
from .guardrails import GuardrailVerdict, StopwordDictionary, load_stopwords, screen_query
from .pipeline import Pipeline, QueryOutcome, Timings, build_pipeline
from .retrieval import (
    ChunkIndex,
    ContextBundle,
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
from .routing import RouterCache, RoutingDecision, RoutingTrace, normalize_query, route

__version__ = "0.1.0"

__all__ = [
    "Chunk",
    "ChunkIndex",
    "ChunkParams",
    "CollectionDescriptor",
    "ContextBundle",
    "DocumentDescriptor",
    "DomainDescriptor",
    "GuardrailVerdict",
    "Pipeline",
    "PipelineConfig",
    "QueryOutcome",
    "Registry",
    "RetrievalResult",
    "RouterCache",
    "RoutingDecision",
    "RoutingTrace",
    "Scope",
    "ServiceConfig",
    "StopwordDictionary",
    "Timings",
    "assemble_context",
    "build_index",
    "build_pipeline",
    "children_of",
    "chunk_corpus",
    "chunk_document",
    "dedup",
    "fuse",
    "lexical_search",
    "load_manifest",
    "load_stopwords",
    "normalize_query",
    "rerank",
    "route",
    "screen_query",
    "semantic_search",
    "serialize_manifest",
    "tokenize",
    "validate_registry",
]

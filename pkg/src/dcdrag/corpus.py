"""Three-level knowledge hierarchy: domains, collections, documents.

A ``Registry`` is the immutable, validated view of one manifest. Every level
designates exactly one fallback element, so a complete routing path
(fallback domain -> its fallback collection -> its fallback document) always
exists no matter how badly upstream selection goes.

Manifest format (JSON, UTF-8)::

    {
      "domains":     [{"id", "name", "description", "is_fallback"}, ...],
      "collections": [{"id", "domain_id", "name", "description", "is_fallback"}, ...],
      "documents":   [{"id", "collection_id", "title", "metadata": {...},
                       "body" | "body_path", "is_fallback"}, ...]
    }

Document bodies may be inline (``body``) or referenced (``body_path``,
resolved relative to the manifest file); both are materialized at load time.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

from .errors import ParseError, UnknownIdError, ValidationError

ID_PATTERN = re.compile(r"^[A-Za-z0-9_-]+$")


@dataclass(frozen=True)
class DomainDescriptor:
    """A high-level subject area; the top routing level."""

    id: str
    name: str
    description: str
    is_fallback: bool = False


@dataclass(frozen=True)
class CollectionDescriptor:
    """A thematically homogeneous subset within one domain."""

    id: str
    domain_id: str
    name: str
    description: str
    is_fallback: bool = False


@dataclass(frozen=True)
class DocumentDescriptor:
    """An atomic knowledge unit. ``title`` is preserved verbatim from source."""

    id: str
    collection_id: str
    title: str
    body: str
    metadata: dict[str, str] = field(default_factory=dict)
    is_fallback: bool = False


@dataclass(frozen=True)
class Registry:
    """Validated snapshot of the whole hierarchy.

    Immutable after construction; safe for unrestricted concurrent reads.
    Reloading a manifest produces a fresh Registry value, so in-flight
    queries keep the snapshot they started with.
    """

    domains: tuple[DomainDescriptor, ...]
    collections: tuple[CollectionDescriptor, ...]
    documents: tuple[DocumentDescriptor, ...]

    @cached_property
    def _domains_by_id(self) -> dict[str, DomainDescriptor]:
        return {d.id: d for d in self.domains}

    @cached_property
    def _collections_by_id(self) -> dict[str, CollectionDescriptor]:
        return {c.id: c for c in self.collections}

    @cached_property
    def _documents_by_id(self) -> dict[str, DocumentDescriptor]:
        return {d.id: d for d in self.documents}

    def domain(self, domain_id: str) -> DomainDescriptor:
        try:
            return self._domains_by_id[domain_id]
        except KeyError:
            raise UnknownIdError(f"unknown domain id: {domain_id!r}") from None

    def collection(self, collection_id: str) -> CollectionDescriptor:
        try:
            return self._collections_by_id[collection_id]
        except KeyError:
            raise UnknownIdError(f"unknown collection id: {collection_id!r}") from None

    def document(self, document_id: str) -> DocumentDescriptor:
        try:
            return self._documents_by_id[document_id]
        except KeyError:
            raise UnknownIdError(f"unknown document id: {document_id!r}") from None

    def domain_of_document(self, document_id: str) -> DomainDescriptor:
        doc = self.document(document_id)
        return self.domain(self.collection(doc.collection_id).domain_id)

    def fallback_domain(self) -> DomainDescriptor:
        return next(d for d in self.domains if d.is_fallback)

    def fallback_collection(self, domain_id: str) -> CollectionDescriptor:
        self.domain(domain_id)
        return next(
            c for c in self.collections if c.domain_id == domain_id and c.is_fallback
        )

    def fallback_document(self, collection_id: str) -> DocumentDescriptor:
        self.collection(collection_id)
        return next(
            d for d in self.documents if d.collection_id == collection_id and d.is_fallback
        )

    def fallback_path(
        self,
    ) -> tuple[DomainDescriptor, CollectionDescriptor, DocumentDescriptor]:
        """The guaranteed routing path used when every selection fails."""
        dom = self.fallback_domain()
        col = self.fallback_collection(dom.id)
        doc = self.fallback_document(col.id)
        return dom, col, doc


def children_of(reg: Registry, level: str, parent_id: str | None = None) -> list:
    """List candidates at ``level`` under ``parent_id``, in manifest order.

    ``level`` names the level being listed: ``"domain"`` returns every domain
    (the root has no id, so ``parent_id`` is ignored), ``"collection"``
    returns the collections of a domain, ``"document"`` the documents of a
    collection. Registry invariants guarantee the result is never empty.
    """
    if level == "domain":
        return list(reg.domains)
    if level == "collection":
        reg.domain(parent_id or "")
        return [c for c in reg.collections if c.domain_id == parent_id]
    if level == "document":
        reg.collection(parent_id or "")
        return [d for d in reg.documents if d.collection_id == parent_id]
    raise ValueError(f"unknown level: {level!r}")


def validate_registry(reg: Registry) -> list[str]:
    """Check every registry invariant; return one message per violation.

    Returns an empty list iff the registry is valid. Never raises: validation
    reports, callers decide. Each message names the rule and the offending id.
    The 3-level structure is acyclic by construction (children reference
    parents one level up only), so no explicit cycle check is needed.
    """
    violations: list[str] = []

    seen_domains: set[str] = set()
    for d in reg.domains:
        if not d.id or not ID_PATTERN.match(d.id):
            violations.append(f"domain {d.id!r}: invalid id")
        elif d.id in seen_domains:
            violations.append(f"domain {d.id}: duplicate id")
        else:
            seen_domains.add(d.id)
        if not d.description.strip():
            violations.append(f"domain {d.id}: empty description")

    seen_collections: set[str] = set()
    for c in reg.collections:
        if not c.id or not ID_PATTERN.match(c.id):
            violations.append(f"collection {c.id!r}: invalid id")
        elif c.id in seen_collections:
            violations.append(f"collection {c.id}: duplicate id")
        else:
            seen_collections.add(c.id)
        if c.domain_id not in seen_domains:
            violations.append(f"collection {c.id}: unknown parent")

    seen_documents: set[str] = set()
    for doc in reg.documents:
        if not doc.id or not ID_PATTERN.match(doc.id):
            violations.append(f"document {doc.id!r}: invalid id")
        elif doc.id in seen_documents:
            violations.append(f"document {doc.id}: duplicate id")
        else:
            seen_documents.add(doc.id)
        if doc.collection_id not in seen_collections:
            violations.append(f"document {doc.id}: unknown parent")
        if not doc.title:
            violations.append(f"document {doc.id}: empty title")

    fallback_domains = [d for d in reg.domains if d.is_fallback]
    if reg.domains and not fallback_domains:
        violations.append("registry: no fallback domain")
    elif len(fallback_domains) > 1:
        violations.append("registry: multiple fallback domains")

    for d in reg.domains:
        fallbacks = [c for c in reg.collections if c.domain_id == d.id and c.is_fallback]
        if not fallbacks:
            violations.append(f"domain {d.id}: no fallback collection")
        elif len(fallbacks) > 1:
            violations.append(f"domain {d.id}: multiple fallback collections")

    for c in reg.collections:
        fallbacks = [x for x in reg.documents if x.collection_id == c.id and x.is_fallback]
        if not fallbacks:
            violations.append(f"collection {c.id}: no fallback document")
        elif len(fallbacks) > 1:
            violations.append(f"collection {c.id}: multiple fallback documents")

    return violations


def _require(entry: dict, key: str, kind: str) -> object:
    try:
        return entry[key]
    except KeyError:
        raise ParseError(f"{kind} entry missing {key!r}") from None


def load_manifest(path: str | Path) -> Registry:
    """Load and validate a manifest file; return the Registry.

    Raises ParseError for malformed JSON or missing keys, ValidationError
    (with every violated rule named) for invariant violations, and OSError
    for unreadable files.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"manifest is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError("manifest root must be a JSON object")

    domains = tuple(
        DomainDescriptor(
            id=str(_require(e, "id", "domain")),
            name=str(e.get("name", "")),
            description=str(_require(e, "description", "domain")),
            is_fallback=bool(e.get("is_fallback", False)),
        )
        for e in data.get("domains", [])
    )
    collections = tuple(
        CollectionDescriptor(
            id=str(_require(e, "id", "collection")),
            domain_id=str(_require(e, "domain_id", "collection")),
            name=str(e.get("name", "")),
            description=str(e.get("description", "")),
            is_fallback=bool(e.get("is_fallback", False)),
        )
        for e in data.get("collections", [])
    )

    documents = []
    for e in data.get("documents", []):
        doc_id = str(_require(e, "id", "document"))
        if "body" in e and "body_path" in e:
            raise ParseError(f"document {doc_id}: both body and body_path given")
        if "body" in e:
            body = str(e["body"])
        elif "body_path" in e:
            body = (path.parent / str(e["body_path"])).read_text(encoding="utf-8")
        else:
            raise ParseError(f"document {doc_id}: needs body or body_path")
        metadata = e.get("metadata", {})
        if not isinstance(metadata, dict):
            raise ParseError(f"document {doc_id}: metadata must be an object")
        documents.append(
            DocumentDescriptor(
                id=doc_id,
                collection_id=str(_require(e, "collection_id", "document")),
                title=str(_require(e, "title", "document")),
                body=body,
                metadata={str(k): str(v) for k, v in metadata.items()},
                is_fallback=bool(e.get("is_fallback", False)),
            )
        )

    reg = Registry(domains=domains, collections=collections, documents=tuple(documents))
    violations = validate_registry(reg)
    if violations:
        raise ValidationError(violations)
    return reg


def serialize_manifest(reg: Registry) -> dict:
    """Render a registry back to manifest form (bodies inline).

    ``load_manifest(write(serialize_manifest(reg)))`` reproduces ``reg``
    exactly for any valid registry.
    """
    return {
        "domains": [
            {
                "id": d.id,
                "name": d.name,
                "description": d.description,
                "is_fallback": d.is_fallback,
            }
            for d in reg.domains
        ],
        "collections": [
            {
                "id": c.id,
                "domain_id": c.domain_id,
                "name": c.name,
                "description": c.description,
                "is_fallback": c.is_fallback,
            }
            for c in reg.collections
        ],
        "documents": [
            {
                "id": doc.id,
                "collection_id": doc.collection_id,
                "title": doc.title,
                "metadata": dict(doc.metadata),
                "body": doc.body,
                "is_fallback": doc.is_fallback,
            }
            for doc in reg.documents
        ],
    }


def save_manifest(reg: Registry, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(serialize_manifest(reg), ensure_ascii=False, indent=2),
        encoding="utf-8",
    )

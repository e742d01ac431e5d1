"""Seeded synthetic corpus and question/answer/context dataset generation.

The generator instantiates a fixed library of sentence templates, so every
document shares structure with its peers and differs only in specific values
(entity names, numeric parameters). That is deliberately the regime where a
flat retriever struggles: sibling documents inside one collection, and the
matching documents of other domains, are near-identical token-for-token.

Layout per document (exactly ``DOC_TOKENS`` whitespace tokens):

* one intro sentence carrying the complex name and the building qualifier —
  the only place those discriminative tokens occur;
* six fact sentences, each from a per-collection-kind template with one
  numeric slot, spread across the body so they land in different chunks;
* boilerplate filler sentences, identical across all documents, cycled from
  a shared pool.

Questions target one fact slot; the reference answer is the slot value with
its unit, and the reference context is the full containing sentence, so the
answer always appears verbatim in its context.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass
from pathlib import Path

from ..corpus import (
    CollectionDescriptor,
    DocumentDescriptor,
    DomainDescriptor,
    Registry,
    serialize_manifest,
)

DOC_TOKENS = 1000
FILLERS_BETWEEN_FACTS = 8


@dataclass(frozen=True)
class CorpusSpec:
    n_domains: int
    collections_per_domain: int
    docs_per_collection: int
    seed: int

    def __post_init__(self):
        if min(self.n_domains, self.collections_per_domain,
               self.docs_per_collection) < 1:
            raise ValueError("all corpus counts must be >= 1")


@dataclass(frozen=True)
class EvalRecord:
    question: str
    reference_answer: str
    reference_context: str
    source_document_id: str

    def __post_init__(self):
        for name in ("question", "reference_answer", "reference_context",
                     "source_document_id"):
            if not getattr(self, name):
                raise ValueError(f"EvalRecord.{name} must be non-empty")


@dataclass(frozen=True)
class FactTemplate:
    slot: str
    sentence: str  # with {value}
    question: str  # with {complex} and {qualifier}
    answer: str  # with {value}
    value_range: tuple[int, int]

    def pattern(self) -> re.Pattern:
        return re.compile(re.escape(self.sentence).replace(r"\{value\}", r"(\d+)"))


_ADJECTIVES = [
    "Crystal", "Emerald", "Harbor", "Maple", "Summit", "Aurora", "Willow",
    "Granite", "Riverside", "Sunset", "Cedar", "Orchid", "Falcon", "Linden",
]
_NOUNS = [
    "Park", "Heights", "Gardens", "Towers", "Court", "Plaza", "Grove",
    "Terrace", "Point", "Meadows",
]

KIND_TEMPLATES: dict[str, list[FactTemplate]] = {
    "infrastructure": [
        FactTemplate(
            "parking_capacity",
            "The underground parking accommodates {value} vehicles in heated boxes.",
            "How many vehicles does the underground parking at {complex} {qualifier} accommodate?",
            "{value} vehicles",
            (120, 960),
        ),
        FactTemplate(
            "elevators",
            "Each entrance is equipped with {value} passenger elevators from the lobby.",
            "How many passenger elevators does each entrance at {complex} {qualifier} have?",
            "{value} passenger elevators",
            (2, 60),
        ),
        FactTemplate(
            "floors",
            "The residential tower rises {value} floors above the street level.",
            "How many floors does the residential tower at {complex} {qualifier} rise above street level?",
            "{value} floors",
            (9, 99),
        ),
        FactTemplate(
            "playground_area",
            "The central playground covers {value} square meters of soft surfacing.",
            "How many square meters does the central playground at {complex} {qualifier} cover?",
            "{value} square meters",
            (300, 1800),
        ),
        FactTemplate(
            "bicycle_slots",
            "The bicycle storage room holds up to {value} bicycles on two tiers.",
            "How many bicycles can the bicycle storage room at {complex} {qualifier} hold?",
            "{value} bicycles",
            (40, 640),
        ),
        FactTemplate(
            "ev_chargers",
            "The garage level offers {value} electric charging stations for residents.",
            "How many electric charging stations does the garage level at {complex} {qualifier} offer?",
            "{value} electric charging stations",
            (4, 96),
        ),
    ],
    "security": [
        FactTemplate(
            "cameras",
            "The perimeter is monitored by {value} surveillance cameras around the clock.",
            "How many surveillance cameras monitor the perimeter at {complex} {qualifier}?",
            "{value} surveillance cameras",
            (24, 480),
        ),
        FactTemplate(
            "guards",
            "A team of {value} licensed guards patrols the grounds in rotating shifts.",
            "How many licensed guards patrol the grounds at {complex} {qualifier}?",
            "{value} licensed guards",
            (4, 80),
        ),
        FactTemplate(
            "checkpoints",
            "Residents pass through {value} access card checkpoints at the entrances.",
            "How many access card checkpoints do residents pass through at {complex} {qualifier}?",
            "{value} access card checkpoints",
            (2, 70),
        ),
        FactTemplate(
            "response_minutes",
            "The mobile response unit arrives within {value} minutes of an alarm signal.",
            "Within how many minutes does the mobile response unit at {complex} {qualifier} arrive?",
            "{value} minutes",
            (3, 90),
        ),
        FactTemplate(
            "intercoms",
            "The intercom network connects {value} apartments to the concierge desk directly.",
            "How many apartments does the intercom network at {complex} {qualifier} connect to the concierge desk?",
            "{value} apartments",
            (80, 720),
        ),
        FactTemplate(
            "smoke_detectors",
            "The fire alarm grid includes {value} smoke detectors across common areas.",
            "How many smoke detectors does the fire alarm grid at {complex} {qualifier} include?",
            "{value} smoke detectors",
            (150, 900),
        ),
    ],
    "description": [
        FactTemplate(
            "apartments_total",
            "The complex comprises {value} apartments across all sections combined.",
            "How many apartments does {complex} {qualifier} comprise across all sections?",
            "{value} apartments",
            (120, 840),
        ),
        FactTemplate(
            "completion_year",
            "Construction of this section was completed in {value} by the developer.",
            "In what year was construction of {complex} {qualifier} completed?",
            "{value}",
            (1998, 2024),
        ),
        FactTemplate(
            "courtyard_area",
            "The landscaped courtyard spans {value} square meters between the towers.",
            "How many square meters does the landscaped courtyard at {complex} {qualifier} span?",
            "{value} square meters",
            (900, 5200),
        ),
        FactTemplate(
            "ceiling_height",
            "The ceiling height in living rooms reaches {value} centimeters after finishing.",
            "How many centimeters does the ceiling height in living rooms at {complex} {qualifier} reach?",
            "{value} centimeters",
            (255, 990),
        ),
        FactTemplate(
            "commercial_units",
            "The ground floor hosts {value} commercial units facing the boulevard.",
            "How many commercial units does the ground floor at {complex} {qualifier} host?",
            "{value} commercial units",
            (3, 66),
        ),
        FactTemplate(
            "planted_trees",
            "The grounds include {value} planted trees along the walking paths.",
            "How many planted trees do the grounds at {complex} {qualifier} include?",
            "{value} planted trees",
            (60, 720),
        ),
    ],
    "amenities": [
        FactTemplate(
            "gym_area",
            "The fitness studio occupies {value} square meters on the mezzanine level.",
            "How many square meters does the fitness studio at {complex} {qualifier} occupy?",
            "{value} square meters",
            (150, 900),
        ),
        FactTemplate(
            "pool_length",
            "The indoor swimming pool measures {value} meters from wall to wall.",
            "How many meters does the indoor swimming pool at {complex} {qualifier} measure?",
            "{value} meters",
            (15, 75),
        ),
        FactTemplate(
            "sauna_seats",
            "The wellness lounge seats {value} visitors per session comfortably.",
            "How many visitors does the wellness lounge at {complex} {qualifier} seat per session?",
            "{value} visitors",
            (6, 72),
        ),
        FactTemplate(
            "coworking_desks",
            "The shared coworking space provides {value} desks with monitors.",
            "How many desks does the shared coworking space at {complex} {qualifier} provide?",
            "{value} desks",
            (10, 130),
        ),
        FactTemplate(
            "party_capacity",
            "The residents lounge hosts events for up to {value} guests at once.",
            "For how many guests can the residents lounge at {complex} {qualifier} host events?",
            "{value} guests",
            (20, 140),
        ),
        FactTemplate(
            "storage_rooms",
            "The basement level contains {value} private storage rooms for rent.",
            "How many private storage rooms does the basement level at {complex} {qualifier} contain?",
            "{value} private storage rooms",
            (30, 330),
        ),
    ],
}

KINDS = list(KIND_TEMPLATES)

# Boilerplate shared verbatim by every document. Composed subject x predicate
# so adjacent chunks cycle through varied vocabulary.
_FILLER_SUBJECTS = [
    "The management office",
    "The maintenance crew",
    "The concierge service",
    "The residents council",
    "The cleaning contractor",
    "The landscaping partner",
    "The utilities provider",
    "The parcel room staff",
]
_FILLER_PREDICATES = [
    "handles incoming requests during listed business hours without prior appointment.",
    "publishes weekly updates on the notice boards near every lobby entrance.",
    "coordinates seasonal inspections together with certified external specialists.",
    "keeps archived reports available for review at the front desk upon request.",
    "schedules preventive servicing so shared equipment stays reliable year round.",
    "answers written inquiries through the resident portal within two working days.",
    "maintains clear signage so visitors find their destination without assistance.",
    "reviews supplier contracts annually to keep operating costs predictable.",
]


def _filler(i: int) -> str:
    subjects = len(_FILLER_SUBJECTS)
    predicates = len(_FILLER_PREDICATES)
    # Stride through the combination table so consecutive fillers differ in
    # both halves.
    subject = _FILLER_SUBJECTS[(i * 3 + i // subjects) % subjects]
    predicate = _FILLER_PREDICATES[(i * 5 + 1) % predicates]
    return f"{subject} {predicate}"


def _intro(complex_name: str, qualifier: str, kind: str) -> str:
    return (
        f"This {kind} overview covers {complex_name} residential complex "
        f"{qualifier} and lists the key figures for residents."
    )


def _complex_names(rng: random.Random, count: int) -> list[str]:
    pairs = [f"{a} {n}" for a in _ADJECTIVES for n in _NOUNS]
    if count > len(pairs):
        raise ValueError(f"at most {len(pairs)} domains supported")
    return rng.sample(pairs, count)


def _qualifier(index: int) -> str:
    if index >= 26:
        raise ValueError("at most 26 documents per domain supported")
    return f"building {chr(ord('A') + index)}"


def _document_body(kind: str, values: dict[str, int], *, doc_tokens: int = DOC_TOKENS,
                   intro: str) -> str:
    sentences = [intro]
    filler_i = 0
    for template in KIND_TEMPLATES[kind]:
        sentences.append(template.sentence.format(value=values[template.slot]))
        for _ in range(FILLERS_BETWEEN_FACTS):
            sentences.append(_filler(filler_i))
            filler_i += 1
    tokens = " ".join(sentences).split()
    while len(tokens) < doc_tokens:
        extra = _filler(filler_i).split()
        filler_i += 1
        tokens.extend(extra)
    return " ".join(tokens[:doc_tokens])


def gen_corpus(spec: CorpusSpec) -> tuple[Registry, dict]:
    """Generate a valid registry plus its manifest, deterministically.

    The first domain, the first collection of each domain and the first
    document of each collection are the designated fallbacks. Slot values
    are sampled without replacement per slot, so no two documents share a
    value for the same fact (keeps every question's ground truth unique).
    """
    rng = random.Random(spec.seed)
    names = _complex_names(rng, spec.n_domains)

    kind_usage = {kind: 0 for kind in KINDS}
    for ci in range(spec.collections_per_domain):
        kind_usage[KINDS[ci % len(KINDS)]] += spec.n_domains * spec.docs_per_collection
    pools: dict[tuple[str, str], list[int]] = {}
    for kind, templates in KIND_TEMPLATES.items():
        for t in templates:
            lo, hi = t.value_range
            population = range(lo, hi + 1)
            needed = kind_usage[kind]
            if len(population) >= needed:
                pools[(kind, t.slot)] = rng.sample(population, needed)
            else:
                # Range too narrow for this corpus size; collisions allowed.
                pools[(kind, t.slot)] = rng.choices(population, k=needed)

    domains: list[DomainDescriptor] = []
    collections: list[CollectionDescriptor] = []
    documents: list[DocumentDescriptor] = []
    consumed: dict[tuple[str, str], int] = {}

    for di, name in enumerate(names):
        domain_id = f"d{di + 1:02d}"
        domains.append(
            DomainDescriptor(
                id=domain_id,
                name=name,
                description=(
                    f"Everything about the {name} residential complex: resident "
                    f"services, buildings, grounds and day-to-day operations of "
                    f"this specific complex only."
                ),
                is_fallback=(di == 0),
            )
        )
        for ci in range(spec.collections_per_domain):
            kind = KINDS[ci % len(KINDS)]
            collection_id = f"{domain_id}-c{ci + 1}"
            collections.append(
                CollectionDescriptor(
                    id=collection_id,
                    domain_id=domain_id,
                    name=f"{name} {kind}",
                    description=(
                        f"{kind.capitalize()} documentation for {name}: reference "
                        f"sheets with the concrete figures for each building."
                    ),
                    is_fallback=(ci == 0),
                )
            )
            for ki in range(spec.docs_per_collection):
                qualifier = _qualifier(ci * spec.docs_per_collection + ki)
                doc_id = f"{collection_id}-doc{ki + 1}"
                values = {}
                for t in KIND_TEMPLATES[kind]:
                    key = (kind, t.slot)
                    values[t.slot] = pools[key][consumed.get(key, 0)]
                    consumed[key] = consumed.get(key, 0) + 1
                documents.append(
                    DocumentDescriptor(
                        id=doc_id,
                        collection_id=collection_id,
                        title=f"{name} — {kind} ({qualifier})",
                        body=_document_body(
                            kind, values, intro=_intro(name, qualifier, kind)
                        ),
                        metadata={
                            "complex": name,
                            "qualifier": qualifier,
                            "kind": kind,
                        },
                        is_fallback=(ki == 0),
                    )
                )

    registry = Registry(
        domains=tuple(domains),
        collections=tuple(collections),
        documents=tuple(documents),
    )
    return registry, serialize_manifest(registry)


def document_facts(doc: DocumentDescriptor) -> list[tuple[FactTemplate, int, str]]:
    """Every template fact present in a document body.

    Returns (template, value, containing sentence) triples; works on any
    document generated from the template library, including after a manifest
    round-trip.
    """
    kind = doc.metadata.get("kind", "")
    facts = []
    for template in KIND_TEMPLATES.get(kind, []):
        m = template.pattern().search(doc.body)
        if m:
            facts.append((template, int(m.group(1)), m.group(0)))
    return facts


def gen_qac(reg: Registry, per_doc: int, seed: int) -> list[EvalRecord]:
    """Per-document question/answer/context records, deterministic under seed.

    Each record targets one fact slot: the question names the complex and
    building, the reference answer is the slot value with its unit, and the
    reference context is the containing sentence.
    """
    if per_doc < 1:
        raise ValueError("per_doc must be >= 1")
    rng = random.Random(seed)
    records = []
    for doc in reg.documents:
        facts = document_facts(doc)
        if len(facts) < per_doc:
            raise ValueError(
                f"document {doc.id} has {len(facts)} template facts, "
                f"need {per_doc}"
            )
        complex_name = doc.metadata["complex"]
        qualifier = doc.metadata["qualifier"]
        for template, value, sentence in rng.sample(facts, per_doc):
            records.append(
                EvalRecord(
                    question=template.question.format(
                        complex=complex_name, qualifier=qualifier
                    ),
                    reference_answer=template.answer.format(value=value),
                    reference_context=sentence,
                    source_document_id=doc.id,
                )
            )
    return records


QAC_SCHEMA = {
    "type": "object",
    "properties": {
        "items": {
            "type": "array",
            "items": {
                "type": "object",
                "properties": {
                    "question": {"type": "string"},
                    "answer": {"type": "string"},
                    "context": {"type": "string"},
                },
                "required": ["question", "answer", "context"],
                "additionalProperties": False,
            },
        }
    },
    "required": ["items"],
    "additionalProperties": False,
}

_QAC_PROMPT = (
    "You are preparing an evaluation dataset for a question answering system.\n"
    "Read the document below and produce exactly {per_doc} items. Each item\n"
    "has: a question a resident might ask (mention the complex and building\n"
    "by name), its answer, and the context — the exact sentence from the\n"
    "document that contains the answer, quoted verbatim.\n\n"
    "DOCUMENT TITLE: {title}\n\nDOCUMENT:\n{body}\n\n"
    'Answer with JSON: {{"items": [{{"question", "answer", "context"}}, ...]}}.'
)

_DOC_PROMPT = (
    "Write a plain-prose reference document for the {kind} section of the\n"
    "{complex} residential complex, {qualifier}. It must state each of the\n"
    "following facts in its own sentence, verbatim where possible, padded\n"
    "with generic operational boilerplate:\n{facts}\n\n"
    "Return only the document text."
)


def gen_qac_llm(
    reg: Registry,
    per_doc: int,
    backend,
    *,
    temperature: float = 0.0,
) -> list[EvalRecord]:
    """Model-generated question/answer/context records, one call per document.

    The template generator above is the deterministic default; this variant
    exists for building realistic datasets against a live model. Items whose
    context is not quoted verbatim from the document are rejected.
    """
    from ..backends import ChatMessage, StructuredRequest

    if per_doc < 1:
        raise ValueError("per_doc must be >= 1")
    records = []
    for doc in reg.documents:
        payload = backend.chat_structured(
            StructuredRequest(
                messages=(
                    ChatMessage(
                        "system",
                        _QAC_PROMPT.format(
                            per_doc=per_doc, title=doc.title, body=doc.body
                        ),
                    ),
                    ChatMessage("user", "Generate the items now."),
                ),
                json_schema=QAC_SCHEMA,
                temperature=temperature,
                schema_name="qac_items",
            )
        )
        items = payload["items"]
        if len(items) != per_doc:
            raise ValueError(
                f"document {doc.id}: model returned {len(items)} items, "
                f"expected {per_doc}"
            )
        for item in items:
            if item["context"] not in doc.body:
                raise ValueError(
                    f"document {doc.id}: generated context is not a verbatim quote"
                )
            records.append(
                EvalRecord(
                    question=item["question"],
                    reference_answer=item["answer"],
                    reference_context=item["context"],
                    source_document_id=doc.id,
                )
            )
    return records


def gen_corpus_llm(spec: CorpusSpec, backend, *, temperature: float = 0.0) -> Registry:
    """Variant of gen_corpus whose document bodies come from a live model.

    Hierarchy, titles, metadata and fact values stay template-driven (they
    are the ground truth); only the prose is model-written, one streaming
    call per document.
    """
    registry, _ = gen_corpus(spec)
    from ..backends import ChatMessage

    documents = []
    for doc in registry.documents:
        facts = document_facts(doc)
        fact_lines = "\n".join(f"- {sentence}" for _, _, sentence in facts)
        joiner = getattr(backend, "token_joiner", "")
        body = joiner.join(
            backend.chat_stream(
                (
                    ChatMessage(
                        "system",
                        _DOC_PROMPT.format(
                            kind=doc.metadata["kind"],
                            complex=doc.metadata["complex"],
                            qualifier=doc.metadata["qualifier"],
                            facts=fact_lines,
                        ),
                    ),
                    ChatMessage("user", "Write the document now."),
                ),
                temperature,
            )
        )
        if not body.strip():
            raise ValueError(f"document {doc.id}: model returned an empty body")
        documents.append(
            DocumentDescriptor(
                id=doc.id,
                collection_id=doc.collection_id,
                title=doc.title,
                body=body,
                metadata=doc.metadata,
                is_fallback=doc.is_fallback,
            )
        )
    return Registry(
        domains=registry.domains,
        collections=registry.collections,
        documents=tuple(documents),
    )


def save_records(records: list[EvalRecord], path: str | Path) -> None:
    """Write records as JSON-lines, one record per line."""
    lines = [
        json.dumps(
            {
                "question": r.question,
                "reference_answer": r.reference_answer,
                "reference_context": r.reference_context,
                "source_document_id": r.source_document_id,
            },
            ensure_ascii=False,
            sort_keys=True,
        )
        for r in records
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_records(path: str | Path) -> list[EvalRecord]:
    records = []
    for i, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines()):
        if not line.strip():
            continue
        data = json.loads(line)
        try:
            records.append(
                EvalRecord(
                    question=data["question"],
                    reference_answer=data["reference_answer"],
                    reference_context=data["reference_context"],
                    source_document_id=data["source_document_id"],
                )
            )
        except KeyError as exc:
            raise ValueError(f"{path}:{i + 1}: record missing field {exc}") from None
    return records

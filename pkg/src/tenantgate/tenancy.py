"""Tenant, principal, document, and ownership domain types.

All types are frozen value objects: they can be shared freely across
concurrent requests. Ownership metadata is attached once at ingestion and
never mutated afterwards; chunks carry the exact ownership object of their
parent document.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import ValidationError

TenantId = str

ATTRIBUTE_CATEGORIES = ("roles", "teams", "projects", "namespaces")


@dataclass(frozen=True)
class AccessAttributes:
    """Named attribute sets used for permit decisions (case-sensitive)."""

    roles: frozenset[str] = frozenset()
    teams: frozenset[str] = frozenset()
    projects: frozenset[str] = frozenset()
    namespaces: frozenset[str] = frozenset()

    @classmethod
    def of(
        cls,
        roles: Iterable[str] = (),
        teams: Iterable[str] = (),
        projects: Iterable[str] = (),
        namespaces: Iterable[str] = (),
    ) -> "AccessAttributes":
        return cls(
            roles=frozenset(roles),
            teams=frozenset(teams),
            projects=frozenset(projects),
            namespaces=frozenset(namespaces),
        )

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, Iterable[str]]) -> "AccessAttributes":
        unknown = set(mapping) - set(ATTRIBUTE_CATEGORIES)
        if unknown:
            raise ValidationError(f"unknown attribute categories: {sorted(unknown)}")
        return cls.of(**{k: mapping.get(k, ()) for k in ATTRIBUTE_CATEGORIES})

    def to_mapping(self) -> dict[str, list[str]]:
        """Serialized form with sorted values so output is deterministic."""
        return {k: sorted(getattr(self, k)) for k in ATTRIBUTE_CATEGORIES if getattr(self, k)}

    def category(self, name: str) -> frozenset[str]:
        if name not in ATTRIBUTE_CATEGORIES:
            raise ValidationError(f"unknown attribute category: {name!r}")
        return getattr(self, name)

    def intersects(self, other: "AccessAttributes", categories: Iterable[str] = ATTRIBUTE_CATEGORIES) -> bool:
        return any(self.category(c) & other.category(c) for c in categories)

    def is_empty(self) -> bool:
        return not any(getattr(self, c) for c in ATTRIBUTE_CATEGORIES)


def attributes_intersect(a: AccessAttributes, b: AccessAttributes) -> bool:
    """True iff at least one category has a non-empty intersection."""
    return a.intersects(b)


@dataclass(frozen=True)
class Principal:
    """An authenticated caller. Only the gateway authenticator constructs these."""

    user_id: str
    tenant: TenantId
    attributes: AccessAttributes = field(default_factory=AccessAttributes)

    def __post_init__(self) -> None:
        if not self.user_id:
            raise ValidationError("Principal.user_id must be non-empty")
        if not self.tenant:
            raise ValidationError("Principal.tenant must be non-empty")


@dataclass(frozen=True)
class OwnershipMetadata:
    """Immutable ownership record stamped onto documents at ingestion."""

    owner_tenant: TenantId
    owner_user: str
    access_attributes: AccessAttributes = field(default_factory=AccessAttributes)
    ingested_at: float = 0.0

    def __post_init__(self) -> None:
        if not self.owner_tenant:
            raise ValidationError("OwnershipMetadata.owner_tenant must be non-empty")


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    topic: str
    ownership: OwnershipMetadata

    def __post_init__(self) -> None:
        if not self.doc_id:
            raise ValidationError("Document.doc_id must be non-empty")
        if not self.text:
            raise ValidationError("Document.text must be non-empty")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str
    doc_id: str
    text: str
    ownership: OwnershipMetadata
    token_count: int

    def __post_init__(self) -> None:
        if self.token_count < 1:
            raise ValidationError("Chunk.token_count must be >= 1")


def count_tokens(text: str) -> int:
    """Whitespace word count; the package-wide token approximation."""
    return len(text.split())


def chunk_document(d: Document, target_tokens: int) -> list[Chunk]:
    """Greedy fixed-size split on word boundaries, no overlap.

    Joining the chunk texts with single spaces reproduces the document text
    up to whitespace normalization. Every chunk shares the parent's ownership
    object, so chunk-level authorization decisions are identical to
    document-level ones.
    """
    if target_tokens < 1:
        raise ValidationError("target_tokens must be >= 1")
    words = d.text.split()
    if not words:
        raise ValidationError("cannot chunk a document with empty text")
    chunks: list[Chunk] = []
    for i, start in enumerate(range(0, len(words), target_tokens)):
        piece = words[start : start + target_tokens]
        chunks.append(
            Chunk(
                chunk_id=f"{d.doc_id}:c{i:03d}",
                doc_id=d.doc_id,
                text=" ".join(piece),
                ownership=d.ownership,
                token_count=len(piece),
            )
        )
    return chunks


def ownership_to_record(o: OwnershipMetadata) -> dict:
    return {
        "owner_tenant": o.owner_tenant,
        "owner_user": o.owner_user,
        "access_attributes": o.access_attributes.to_mapping(),
        "ingested_at": o.ingested_at,
    }


def ownership_from_record(record: Mapping) -> OwnershipMetadata:
    return OwnershipMetadata(
        owner_tenant=record["owner_tenant"],
        owner_user=record.get("owner_user", ""),
        access_attributes=AccessAttributes.from_mapping(record.get("access_attributes", {})),
        ingested_at=float(record.get("ingested_at", 0.0)),
    )


# Corpus interchange: one JSON record per line with exactly these fields.
CORPUS_FIELDS = ("doc_id", "tenant", "topic", "text", "access_attributes")


def document_to_record(d: Document) -> dict:
    return {
        "doc_id": d.doc_id,
        "tenant": d.ownership.owner_tenant,
        "topic": d.topic,
        "text": d.text,
        "access_attributes": d.ownership.access_attributes.to_mapping(),
    }


def document_from_record(record: Mapping, owner_user: str | None = None) -> Document:
    missing = [k for k in CORPUS_FIELDS if k not in record]
    if missing:
        raise ValidationError(f"corpus record missing fields: {missing}")
    tenant = record["tenant"]
    ownership = OwnershipMetadata(
        owner_tenant=tenant,
        owner_user=owner_user if owner_user is not None else f"{tenant}:ingest",
        access_attributes=AccessAttributes.from_mapping(record["access_attributes"]),
    )
    return Document(
        doc_id=record["doc_id"],
        text=record["text"],
        topic=record["topic"],
        ownership=ownership,
    )


def write_corpus(path: str | Path, documents: Iterable[Document]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for d in documents:
            fh.write(json.dumps(document_to_record(d), sort_keys=True) + "\n")
            n += 1
    return n


def read_corpus(path: str | Path) -> Iterator[Document]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"corpus line {line_no} is not valid JSON: {exc}") from exc
            yield document_from_record(record)

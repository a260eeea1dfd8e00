"""Interleaved document data model and document-format views.

A document is an ordered list of sections; a section is an ordered list of
text / image / table segments.  All types are immutable after construction
and safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterator, Optional, Sequence, Tuple

from .errors import (
    BadSegmentKind,
    BadTableMarkup,
    DuplicateDocId,
    DuplicateSectionId,
    EmptyQuery,
    EmptySection,
    EmptySections,
    EmptySegment,
)

SEGMENT_KINDS = ("text", "image", "table")


class DocFormat(str, Enum):
    """Document views compared in the format ablation."""

    ENTITY = "entity"
    SUMMARY = "summary"
    TEXT_ONLY = "text_only"
    SINGLE_IMAGE = "single_image"
    INTERLEAVED = "interleaved"


@dataclass(frozen=True)
class Segment:
    kind: str
    content: str


@dataclass(frozen=True)
class Section:
    section_id: str
    heading: str
    segments: Tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    sections: Tuple[Section, ...]

    def __post_init__(self):
        object.__setattr__(self, "sections", tuple(self.sections))


@dataclass(frozen=True)
class Query:
    query_id: str
    text: str
    image_refs: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "image_refs", tuple(self.image_refs))


@dataclass(frozen=True)
class QRel:
    query_id: str
    doc_id: str
    section_id: Optional[str] = None


@dataclass(frozen=True)
class Corpus:
    documents: Tuple[Document, ...]
    _by_id: Dict[str, Document] = field(repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "documents", tuple(self.documents))
        by_id: Dict[str, Document] = {}
        for doc in self.documents:
            if doc.doc_id in by_id:
                raise DuplicateDocId(doc.doc_id)
            by_id[doc.doc_id] = doc
        object.__setattr__(self, "_by_id", by_id)

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self) -> Iterator[Document]:
        return iter(self.documents)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._by_id

    def get(self, doc_id: str) -> Document:
        return self._by_id[doc_id]


def validate_document(doc: Document) -> None:
    """Check every structural invariant; raises a DataError naming the offender."""
    if not doc.sections:
        raise EmptySections(doc.doc_id)
    seen = set()
    for section in doc.sections:
        if section.section_id in seen:
            raise DuplicateSectionId(section.section_id)
        seen.add(section.section_id)
        if not section.segments:
            raise EmptySection(f"{doc.doc_id}/{section.section_id}")
        for segment in section.segments:
            if segment.kind not in SEGMENT_KINDS:
                raise BadSegmentKind(f"{doc.doc_id}/{section.section_id}: {segment.kind!r}")
            if not segment.content.split():
                raise EmptySegment(f"{doc.doc_id}/{section.section_id}")
            if segment.kind == "table":
                body = segment.content.strip()
                if not (body.lower().startswith("<table") and body.lower().endswith("</table>")):
                    raise BadTableMarkup(f"{doc.doc_id}/{section.section_id}")


def validate_query(query: Query) -> None:
    if not query.text.split() and not any(r.split() for r in query.image_refs):
        raise EmptyQuery(query.query_id)


def _title_section(doc: Document) -> Section:
    text = doc.title.strip() or doc.doc_id.strip() or "untitled"
    return Section(section_id="title", heading="", segments=(Segment("text", text),))


def _first_image(doc: Document) -> Optional[Tuple[int, Segment]]:
    for i, section in enumerate(doc.sections):
        for segment in section.segments:
            if segment.kind == "image":
                return i, segment
    return None


def apply_format(doc: Document, fmt: DocFormat) -> Document:
    """Produce the view of ``doc`` used by the given format.

    Sections whose segment list becomes empty are dropped; if all sections
    drop, the result falls back to a single text section holding the title,
    so every document stays embeddable.  Idempotent for every format.
    """
    fmt = DocFormat(fmt)
    if fmt is DocFormat.INTERLEAVED:
        return doc
    if fmt is DocFormat.ENTITY:
        return Document(doc.doc_id, doc.title, (_title_section(doc),))

    source = doc.sections[:1] if fmt is DocFormat.SUMMARY else doc.sections
    kept = [
        (section, [seg for seg in section.segments if seg.kind == "text"])
        for section in source
    ]

    if fmt is DocFormat.SINGLE_IMAGE:
        hit = _first_image(doc)
        if hit is not None:
            idx, image = hit
            kept[idx] = (kept[idx][0], [image] + kept[idx][1])

    sections = tuple(
        Section(section.section_id, section.heading, tuple(segments))
        for section, segments in kept
        if segments
    )
    if not sections:
        sections = (_title_section(doc),)
    return Document(doc.doc_id, doc.title, sections)

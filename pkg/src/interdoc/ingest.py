"""HTML ingestion and corpus/query/qrel file formats.

Documents are split into sections at <h2>/<h3> subtitles; deeper headings
stay inside the enclosing section.  Visible text runs merge into single
text segments, <img> tags become "src | alt" image segments, and <table>
markup is normalized by :func:`linearize_table`.
"""
from __future__ import annotations

import json
from html.parser import HTMLParser
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

from .corpus import Corpus, Document, QRel, Query, Section, Segment, validate_document, validate_query
from .errors import (
    DanglingReference,
    MalformedInput,
    NoContent,
    NotATable,
    SchemaError,
)

# Tags that are kept when normalizing table markup.
TABLE_TAGS = ("table", "thead", "tbody", "tr", "th", "td", "caption")

_SKIP_TAGS = frozenset({"script", "style", "nav", "footer"})
_HEADING_TAGS = frozenset({"h2", "h3"})


class _TableNormalizer(HTMLParser):
    """Rebuilds table markup keeping only structural tags and collapsed text."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.out: List[str] = []
        self.text: List[str] = []
        self.stack: List[str] = []
        self.done = False

    def _flush(self):
        collapsed = " ".join("".join(self.text).split())
        self.text = []
        if collapsed:
            self.out.append(collapsed)

    def handle_starttag(self, tag, attrs):
        if self.done:
            return
        tag = tag.lower()
        if tag in TABLE_TAGS:
            self._flush()
            self.out.append(f"<{tag}>")
            self.stack.append(tag)

    def handle_endtag(self, tag):
        if self.done:
            return
        tag = tag.lower()
        if tag in TABLE_TAGS and tag in self.stack:
            self._flush()
            # Close any unclosed inner tags left open by tag soup.
            while self.stack:
                top = self.stack.pop()
                self.out.append(f"</{top}>")
                if top == tag:
                    break
            if not self.stack:
                self.done = True

    def handle_data(self, data):
        if not self.done:
            self.text.append(data)

    def result(self) -> str:
        self._flush()
        while self.stack:
            self.out.append(f"</{self.stack.pop()}>")
        return "".join(self.out)


def linearize_table(table_html: str) -> str:
    """Normalize table markup: lowercase tags, no attributes, collapsed cells."""
    if not table_html.strip().lower().startswith("<table"):
        raise NotATable(table_html[:40])
    normalizer = _TableNormalizer()
    normalizer.feed(table_html)
    normalizer.close()
    return normalizer.result()


# Tags that implicitly terminate an unclosed <title>/<h1>/<h2>/<h3> capture,
# the way browsers auto-close headings at the next block element.
_BLOCK_TAGS = frozenset(
    {"p", "div", "ul", "ol", "li", "table", "img", "section", "article",
     "blockquote", "pre", "br", "hr", "h1", "h2", "h3", "h4", "h5", "h6"}
)


class _DocumentBuilder(HTMLParser):
    """Streams HTML events into sections of text / image / table segments."""

    def __init__(self):
        super().__init__(convert_charrefs=True)
        self.title_text = ""
        self.h1_text = ""
        self.capture_kind: Optional[str] = None
        self.capture_buf: List[str] = []
        self.skip_depth = 0
        self.table_depth = 0
        self.table_parts: List[str] = []
        self.text_parts: List[str] = []
        self.heading = ""
        self.segments: List[Segment] = []
        self.sections: List[Tuple[str, List[Segment]]] = []
        self.seen_title = False
        self.seen_h1 = False

    def _flush_text(self):
        collapsed = " ".join("".join(self.text_parts).split())
        self.text_parts = []
        if collapsed:
            self.segments.append(Segment("text", collapsed))

    def _flush_section(self):
        self._flush_text()
        if self.segments:
            self.sections.append((self.heading, self.segments))
        self.segments = []

    def _close_table(self):
        raw = "".join(self.table_parts)
        self.table_parts = []
        try:
            self.segments.append(Segment("table", linearize_table(raw)))
        except NotATable:
            pass

    def _end_capture(self):
        collapsed = " ".join("".join(self.capture_buf).split())
        if self.capture_kind == "title":
            self.title_text = collapsed
            self.seen_title = True
        elif self.capture_kind == "h1":
            self.h1_text = collapsed
            self.seen_h1 = True
        else:
            self.heading = collapsed
        self.capture_kind = None
        self.capture_buf = []

    def handle_starttag(self, tag, attrs):
        tag = tag.lower()
        if tag in _SKIP_TAGS:
            self.skip_depth += 1
            return
        if self.skip_depth:
            return
        if self.table_depth:
            if tag == "table":
                self.table_depth += 1
            self.table_parts.append(f"<{tag}>")
            return
        if self.capture_kind is not None and tag in _BLOCK_TAGS:
            self._end_capture()
        if tag == "table":
            self._flush_text()
            self.table_depth = 1
            self.table_parts = ["<table>"]
            return
        if tag == "img":
            self._flush_text()
            props = dict(attrs)
            src = (props.get("src") or "").strip()
            alt = " ".join((props.get("alt") or "").split())
            content = f"{src} | {alt}".strip() if alt else src
            if content:
                self.segments.append(Segment("image", content))
            return
        if tag == "title" and not self.seen_title and self.capture_kind is None:
            self.capture_kind = "title"
            return
        if tag == "h1" and not self.seen_h1 and self.capture_kind is None:
            self.capture_kind = "h1"
            return
        if tag in _HEADING_TAGS:
            self._flush_section()
            self.capture_kind = "heading"
            return

    def handle_startendtag(self, tag, attrs):
        if tag.lower() == "img":
            self.handle_starttag(tag, attrs)

    def handle_endtag(self, tag):
        tag = tag.lower()
        if tag in _SKIP_TAGS:
            self.skip_depth = max(0, self.skip_depth - 1)
            return
        if self.skip_depth:
            return
        if self.table_depth:
            self.table_parts.append(f"</{tag}>")
            if tag == "table":
                self.table_depth -= 1
                if self.table_depth == 0:
                    self._close_table()
            return
        if self.capture_kind is not None and (
            (tag == "title" and self.capture_kind == "title")
            or (tag == "h1" and self.capture_kind == "h1")
            or (tag in _HEADING_TAGS and self.capture_kind == "heading")
        ):
            self._end_capture()

    def handle_data(self, data):
        if self.skip_depth:
            return
        if self.table_depth:
            self.table_parts.append(data)
            return
        if self.capture_kind is not None:
            self.capture_buf.append(data)
            return
        self.text_parts.append(data)

    def finish(self) -> Tuple[str, List[Tuple[str, List[Segment]]]]:
        if self.capture_kind is not None:
            self._end_capture()
        if self.table_depth:
            self.table_depth = 0
            self._close_table()
        self._flush_section()
        return self.title_text or self.h1_text, self.sections


def parse_html(html: bytes, doc_id: str) -> Document:
    """Parse one HTML document into the interleaved corpus model."""
    try:
        text = html.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedInput(f"{doc_id}: {exc}") from exc
    builder = _DocumentBuilder()
    builder.feed(text)
    builder.close()
    title, raw_sections = builder.finish()
    if not raw_sections:
        raise NoContent(doc_id)
    sections = tuple(
        Section(section_id=f"s{i}", heading=heading, segments=tuple(segments))
        for i, (heading, segments) in enumerate(raw_sections)
    )
    doc = Document(doc_id=doc_id, title=title or doc_id, sections=sections)
    validate_document(doc)
    return doc


# -- JSONL / TSV serialization ------------------------------------------------

def document_to_dict(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "title": doc.title,
        "sections": [
            {
                "section_id": s.section_id,
                "heading": s.heading,
                "segments": [{"kind": g.kind, "content": g.content} for g in s.segments],
            }
            for s in doc.sections
        ],
    }


def document_from_dict(obj: dict, line: Optional[int] = None) -> Document:
    try:
        sections = tuple(
            Section(
                section_id=s["section_id"],
                heading=s["heading"],
                segments=tuple(Segment(g["kind"], g["content"]) for g in s["segments"]),
            )
            for s in obj["sections"]
        )
        return Document(doc_id=obj["doc_id"], title=obj["title"], sections=sections)
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"bad document record: {exc}", line=line) from exc


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def write_corpus(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for doc in corpus:
            handle.write(_dump(document_to_dict(doc)) + "\n")


def read_corpus(path) -> Corpus:
    documents = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(str(exc), line=line_no) from exc
            doc = document_from_dict(obj, line=line_no)
            validate_document(doc)
            documents.append(doc)
    return Corpus(tuple(documents))


def write_queries(queries: Sequence[Query], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for q in queries:
            handle.write(
                _dump({"query_id": q.query_id, "text": q.text, "image_refs": list(q.image_refs)})
                + "\n"
            )


def read_queries(path) -> List[Query]:
    queries = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                query = Query(
                    query_id=obj["query_id"],
                    text=obj["text"],
                    image_refs=tuple(obj.get("image_refs", ())),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise SchemaError(str(exc), line=line_no) from exc
            try:
                validate_query(query)
            except Exception as exc:
                raise SchemaError(str(exc), line=line_no) from exc
            queries.append(query)
    return queries


def write_qrels(qrels: Sequence[QRel], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for r in qrels:
            section = r.section_id if r.section_id is not None else "-"
            handle.write(f"{r.query_id}\t{r.doc_id}\t{section}\n")


def read_qrels(path) -> List[QRel]:
    qrels = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise SchemaError(f"expected 3 tab-separated fields, got {len(fields)}", line=line_no)
            query_id, doc_id, section_id = fields
            qrels.append(QRel(query_id, doc_id, None if section_id == "-" else section_id))
    return qrels


def validate_qrels(qrels: Iterable[QRel], corpus: Corpus, queries: Sequence[Query]) -> None:
    """Every referenced id must exist in the paired corpus / query set."""
    query_ids = {q.query_id for q in queries}
    for r in qrels:
        if r.query_id not in query_ids:
            raise DanglingReference(f"unknown query {r.query_id!r}")
        if r.doc_id not in corpus:
            raise DanglingReference(f"unknown document {r.doc_id!r}")
        if r.section_id is not None:
            doc = corpus.get(r.doc_id)
            if r.section_id not in {s.section_id for s in doc.sections}:
                raise DanglingReference(f"unknown section {r.doc_id!r}/{r.section_id!r}")


def ingest_directory(in_dir, out_path) -> int:
    """Parse every .html/.htm file under ``in_dir`` into a corpus JSONL."""
    paths = sorted(
        p for p in Path(in_dir).iterdir() if p.suffix.lower() in (".html", ".htm")
    )
    documents = []
    for p in paths:
        documents.append(parse_html(p.read_bytes(), doc_id=p.stem))
    corpus = Corpus(tuple(documents))
    write_corpus(corpus, out_path)
    return len(documents)

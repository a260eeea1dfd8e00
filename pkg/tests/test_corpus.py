import numpy as np
import pytest

from interdoc.corpus import (
    Corpus,
    DocFormat,
    Document,
    Query,
    Section,
    Segment,
    apply_format,
    validate_document,
    validate_query,
)
from interdoc.errors import (
    BadTableMarkup,
    DuplicateDocId,
    DuplicateSectionId,
    EmptyQuery,
    EmptySection,
    EmptySections,
    EmptySegment,
)


def make_doc():
    return Document(
        doc_id="d1",
        title="X",
        sections=(
            Section("s1", "", (
                Segment("text", "alpha beta"),
                Segment("image", "pic.jpg | a picture"),
                Segment("table", "<table><tr><td>a</td></tr></table>"),
            )),
            Section("s2", "Later", (Segment("text", "gamma"),)),
        ),
    )


class TestValidateDocument:
    def test_minimal_valid(self):
        doc = Document("d", "t", (Section("s1", "", (Segment("text", "a"),)),))
        validate_document(doc)

    def test_no_sections(self):
        with pytest.raises(EmptySections):
            validate_document(Document("d", "t", ()))

    def test_duplicate_section_id(self):
        s = Section("s1", "", (Segment("text", "a"),))
        with pytest.raises(DuplicateSectionId, match="s1"):
            validate_document(Document("d", "t", (s, s)))

    def test_section_without_segments(self):
        with pytest.raises(EmptySection):
            validate_document(Document("d", "t", (Section("s1", "", ()),)))

    def test_blank_segment(self):
        doc = Document("d", "t", (Section("s1", "", (Segment("text", "   "),)),))
        with pytest.raises(EmptySegment):
            validate_document(doc)

    def test_bad_table_markup(self):
        doc = Document("d", "t", (Section("s1", "", (Segment("table", "<div>x</div>"),)),))
        with pytest.raises(BadTableMarkup):
            validate_document(doc)

    def test_valid_fixture(self):
        validate_document(make_doc())


class TestValidateQuery:
    def test_text_only(self):
        validate_query(Query("q", "hello"))

    def test_image_only(self):
        validate_query(Query("q", "", ("pic.jpg | a pic",)))

    def test_empty_rejected(self):
        with pytest.raises(EmptyQuery):
            validate_query(Query("q", "  ", ()))


class TestCorpus:
    def test_lookup(self):
        corpus = Corpus((make_doc(),))
        assert corpus.get("d1").title == "X"
        assert "d1" in corpus and "nope" not in corpus

    def test_duplicate_doc_id(self):
        with pytest.raises(DuplicateDocId):
            Corpus((make_doc(), make_doc()))


class TestApplyFormat:
    def test_interleaved_identity(self):
        doc = make_doc()
        assert apply_format(doc, DocFormat.INTERLEAVED) == doc

    def test_entity_single_title_segment(self):
        out = apply_format(make_doc(), DocFormat.ENTITY)
        assert len(out.sections) == 1
        assert out.sections[0].segments == (Segment("text", "X"),)

    def test_summary_first_section_text_only(self):
        out = apply_format(make_doc(), DocFormat.SUMMARY)
        assert len(out.sections) == 1
        assert out.sections[0].segments == (Segment("text", "alpha beta"),)

    def test_text_only_filters(self):
        out = apply_format(make_doc(), DocFormat.TEXT_ONLY)
        assert [s.section_id for s in out.sections] == ["s1", "s2"]
        assert all(seg.kind == "text" for s in out.sections for seg in s.segments)

    def test_single_image_prepends_first_image(self):
        # Golden case: s1 [text,img,table], s2 [text] -> s1 [img,text], s2 [text].
        out = apply_format(make_doc(), DocFormat.SINGLE_IMAGE)
        assert [seg.kind for seg in out.sections[0].segments] == ["image", "text"]
        assert out.sections[0].segments[0].content == "pic.jpg | a picture"
        assert [seg.kind for seg in out.sections[1].segments] == ["text"]

    def test_single_image_without_images_matches_text_only(self):
        doc = Document("d", "t", (Section("s1", "", (Segment("text", "a"),)),))
        assert apply_format(doc, DocFormat.SINGLE_IMAGE) == apply_format(doc, DocFormat.TEXT_ONLY)

    def test_title_fallback_when_all_sections_drop(self):
        doc = Document(
            "d", "Topic",
            (Section("s1", "", (Segment("image", "a.jpg | only image"),)),),
        )
        out = apply_format(doc, DocFormat.TEXT_ONLY)
        assert len(out.sections) == 1
        assert out.sections[0].segments[0] == Segment("text", "Topic")

    def test_image_only_section_survives_single_image(self):
        doc = Document(
            "d", "Topic",
            (
                Section("s1", "", (Segment("image", "a.jpg | only image"),)),
                Section("s2", "", (Segment("text", "body"),)),
            ),
        )
        out = apply_format(doc, DocFormat.SINGLE_IMAGE)
        assert [s.section_id for s in out.sections] == ["s1", "s2"]
        assert out.sections[0].segments[0].kind == "image"


def _random_doc(rng):
    num_sections = int(rng.integers(1, 5))
    sections = []
    for i in range(num_sections):
        segments = []
        for _ in range(int(rng.integers(1, 4))):
            kind = ("text", "image", "table")[int(rng.integers(3))]
            if kind == "text":
                segments.append(Segment("text", f"word{rng.integers(100)}"))
            elif kind == "image":
                segments.append(Segment("image", f"f{rng.integers(100)}.jpg | alt text"))
            else:
                segments.append(Segment("table", f"<table><tr><td>c{rng.integers(100)}</td></tr></table>"))
        sections.append(Section(f"s{i}", "" if i == 0 else f"h{i}", tuple(segments)))
    return Document(f"doc{rng.integers(1000)}", f"title{rng.integers(100)}", tuple(sections))


class TestFormatProperties:
    def test_idempotence_and_validity(self):
        rng = np.random.default_rng(7)
        for _ in range(200):
            doc = _random_doc(rng)
            for fmt in DocFormat:
                once = apply_format(doc, fmt)
                validate_document(once)
                assert apply_format(once, fmt) == once

    def test_entity_shape_for_random_docs(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            doc = _random_doc(rng)
            out = apply_format(doc, DocFormat.ENTITY)
            assert len(out.sections) == 1
            assert out.sections[0].segments == (Segment("text", doc.title),)

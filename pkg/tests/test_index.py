import math

import numpy as np
import pytest

from interdoc.corpus import Corpus, Document, Section, Segment
from interdoc.encoding import Embedding, HashEncoderBackend, init_encoder_params
from interdoc.errors import BadMagic, DimMismatch, Truncated, VersionMismatch
from interdoc.index import Index, build_index, embed_document, load_index, save_index, search


def brute_force_topk(rows, doc_ids, zq, k):
    """Independent oracle: plain cosine + full sort with the tie rule."""
    scored = []
    qn = math.sqrt(sum(x * x for x in zq))
    for doc_id, row in zip(doc_ids, rows):
        rn = math.sqrt(sum(x * x for x in row))
        if qn == 0.0 or rn == 0.0:
            score = float("-inf")
        else:
            score = sum(a * b for a, b in zip(zq, row)) / (qn * rn)
        scored.append((doc_id, score))
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def make_index(rows, doc_ids):
    rows = np.asarray(rows, dtype=np.float32)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    return Index(dim=rows.shape[1], rows=rows, doc_ids=list(doc_ids), norms=norms)


class _FixedBackend:
    """Backend that returns pre-assigned vectors keyed by section id."""

    def __init__(self, table, d):
        self.table = table
        self.d = d

    def dim(self):
        return self.d

    def encode_sections(self, sections):
        return [Embedding("section", np.asarray(self.table[s.section_id], dtype=float)) for s in sections]

    def encode_query(self, query):
        raise NotImplementedError


def _doc(section_ids):
    return Document(
        "d", "t", tuple(Section(s, "", (Segment("text", s),)) for s in section_ids)
    )


class TestEmbedDocument:
    def test_mean_of_two(self):
        backend = _FixedBackend({"a": [2.0, 0.0], "b": [0.0, 2.0]}, 2)
        emb = embed_document(backend, _doc(["a", "b"]))
        np.testing.assert_array_equal(emb.values, [1.0, 1.0])
        assert emb.role == "document"

    def test_single_section(self):
        backend = _FixedBackend({"a": [3.0, -1.0]}, 2)
        emb = embed_document(backend, _doc(["a"]))
        np.testing.assert_array_equal(emb.values, [3.0, -1.0])

    def test_sampled_subset_matches_recomputation(self):
        rng_feed = np.random.default_rng(42)
        table = {f"s{i}": rng_feed.normal(size=4) for i in range(10)}
        backend = _FixedBackend(table, 4)
        doc = _doc([f"s{i}" for i in range(10)])

        emb = embed_document(backend, doc, section_limit=4, rng=np.random.default_rng(5))
        picks = np.random.default_rng(5).choice(10, size=4, replace=False)
        chosen = np.stack([table[f"s{i}"] for i in picks])
        expected = chosen[np.lexsort(chosen.T[::-1])].sum(axis=0) / 4
        np.testing.assert_array_equal(emb.values, expected)

    def test_section_permutation_bit_identical(self):
        rng = np.random.default_rng(0)
        table = {f"s{i}": rng.normal(size=8) for i in range(6)}
        backend = _FixedBackend(table, 8)
        base = embed_document(backend, _doc([f"s{i}" for i in range(6)]))
        for _ in range(10):
            perm = rng.permutation(6)
            shuffled = embed_document(backend, _doc([f"s{i}" for i in perm]))
            assert np.array_equal(base.values, shuffled.values)

    def test_limit_of_all_sections_is_plain_mean(self):
        backend = _FixedBackend({"a": [1.0, 0.0], "b": [0.0, 1.0]}, 2)
        with_limit = embed_document(backend, _doc(["a", "b"]), section_limit=2)
        without = embed_document(backend, _doc(["a", "b"]))
        assert np.array_equal(with_limit.values, without.values)


class TestBuildIndex:
    def _corpus(self):
        docs = tuple(
            Document(f"d{i}", "t", (Section("s0", "", (Segment("text", f"w{i}"),)),))
            for i in range(3)
        )
        return Corpus(docs)

    def test_corpus_order_and_count(self):
        backend = HashEncoderBackend(init_encoder_params(d_emb=8, F=64, seed=0))
        index = build_index(self._corpus(), backend)
        assert index.doc_ids == ["d0", "d1", "d2"]
        assert len(index) == 3

    def test_rebuild_bit_identical(self):
        backend = HashEncoderBackend(init_encoder_params(d_emb=8, F=64, seed=0))
        a = build_index(self._corpus(), backend)
        b = build_index(self._corpus(), backend)
        assert np.array_equal(a.rows, b.rows)

    def test_zero_norm_flagged(self):
        table = {"a": [1.0, 0.0], "z": [0.0, 0.0]}
        backend = _FixedBackend(table, 2)
        docs = (
            Document("live", "t", (Section("a", "", (Segment("text", "x"),)),)),
            Document("dead", "t", (Section("z", "", (Segment("text", "x"),)),)),
        )
        index = build_index(Corpus(docs), backend)
        assert index.zero_norm_ids() == ["dead"]


class TestSearch:
    def test_single_doc(self):
        index = make_index([[1.0, 1.0]], ["only"])
        (hit,) = search(index, Embedding("query", np.array([1.0, 0.0])), 5)
        assert hit[0] == "only"
        assert hit[1] == pytest.approx(1 / math.sqrt(2))

    def test_hand_cosines(self):
        index = make_index([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]], ["d1", "d2", "d3"])
        hits = search(index, Embedding("query", np.array([1.0, 0.0])), 2)
        assert hits == [("d1", pytest.approx(1.0)), ("d2", pytest.approx(0.0))]

    def test_zero_norm_row_never_outranks(self):
        index = make_index([[0.0, 0.0], [-1.0, 0.0]], ["zero", "anti"])
        hits = search(index, Embedding("query", np.array([1.0, 0.0])), 2)
        assert hits[0][0] == "anti"
        assert hits[1] == ("zero", float("-inf"))

    def test_tie_break_ascending_doc_id(self):
        index = make_index([[1.0, 0.0], [2.0, 0.0], [3.0, 0.0]], ["b", "a", "c"])
        hits = search(index, Embedding("query", np.array([1.0, 0.0])), 3)
        assert [h[0] for h in hits] == ["a", "b", "c"]

    def test_k_larger_than_corpus(self):
        index = make_index([[1.0, 0.0]], ["d"])
        assert len(search(index, Embedding("query", np.array([1.0, 0.0])), 10)) == 1

    def test_dim_mismatch(self):
        index = make_index([[1.0, 0.0]], ["d"])
        with pytest.raises(DimMismatch):
            search(index, Embedding("query", np.array([1.0, 0.0, 0.0])), 1)

    def test_scale_invariance_of_ranking(self):
        rng = np.random.default_rng(17)
        index = make_index(rng.normal(size=(50, 8)), [f"d{i:03d}" for i in range(50)])
        zq = rng.normal(size=8)
        base = [d for d, _ in search(index, Embedding("query", zq), 20)]
        for c in (1e-6, 0.5, 3.0, 1e6):
            scaled = [d for d, _ in search(index, Embedding("query", c * zq), 20)]
            assert scaled == base

    def test_matches_brute_force_oracle(self):
        rng = np.random.default_rng(99)
        for trial in range(30):
            n = int(rng.integers(1, 200))
            d = int(rng.integers(2, 16))
            rows = rng.normal(size=(n, d))
            if trial % 3 == 0 and n > 2:
                rows[rng.integers(n)] = 0.0
            ids = [f"doc{i:04d}" for i in range(n)]
            index = make_index(rows, ids)
            zq = rng.normal(size=d)
            k = int(rng.integers(1, n + 3))
            expected = brute_force_topk(index.rows.astype(np.float64), ids, zq, k)
            actual = search(index, Embedding("query", zq), k)
            assert [a[0] for a in actual] == [e[0] for e in expected]
            for (_, sa), (_, se) in zip(actual, expected):
                if math.isfinite(se):
                    assert sa == pytest.approx(se, rel=1e-9)
                else:
                    assert sa == float("-inf")


class TestIndexFile:
    def _index(self):
        rng = np.random.default_rng(4)
        return make_index(rng.normal(size=(5, 6)), [f"d{i}" for i in range(5)])

    def test_roundtrip_bit_exact(self, tmp_path):
        index = self._index()
        path = tmp_path / "x.idix"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.doc_ids == index.doc_ids
        assert np.array_equal(loaded.rows, index.rows)
        # A second save must produce identical bytes.
        again = tmp_path / "y.idix"
        save_index(loaded, again)
        assert path.read_bytes() == again.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.idix"
        save_index(self._index(), path)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagic):
            load_index(path)

    def test_version_mismatch(self, tmp_path):
        path = tmp_path / "x.idix"
        save_index(self._index(), path)
        data = bytearray(path.read_bytes())
        data[4] = 99
        path.write_bytes(bytes(data))
        with pytest.raises(VersionMismatch):
            load_index(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "x.idix"
        save_index(self._index(), path)
        path.write_bytes(path.read_bytes()[:-7])
        with pytest.raises(Truncated):
            load_index(path)

    def test_unicode_doc_ids(self, tmp_path):
        index = make_index([[1.0, 2.0]], ["ドキュメント-1"])
        path = tmp_path / "u.idix"
        save_index(index, path)
        assert load_index(path).doc_ids == ["ドキュメント-1"]

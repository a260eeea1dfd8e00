import numpy as np
import pytest

from interdoc.corpus import Query, Section, Segment
from interdoc.encoding import (
    EOQ,
    EOS,
    FeatureVector,
    HashEncoderBackend,
    TokenStream,
    encode,
    hash_features,
    init_encoder_params,
    tokenize_query,
    tokenize_section,
)
from interdoc.errors import DimMismatch

# Frozen (token, bucket, signed count) triples at F=1024; these pin the hash
# constants so the on-disk formats stay readable across releases.
GOLDEN_HASHES = [
    ("txt:who", 430, -1),
    ("txt:designed", 931, 1),
    ("txt:this", 526, 1),
    ("[EOQ]", 75, 1),
    ("[EOS]", 510, 1),
    ("[SEP]", 74, -1),
    ("img:hall.jpg", 88, 1),
    ("tbl:<table>", 738, -1),
    ("txt:1900", 644, -1),
    ("tbl:history", 56, -1),
]


class TestTokenizeQuery:
    def test_text_query(self):
        q = Query("q", "Who designed this?")
        assert list(tokenize_query(q)) == ["txt:who", "txt:designed", "txt:this", EOQ]

    def test_image_query(self):
        q = Query("q", "", ("hall.jpg | town hall",))
        assert list(tokenize_query(q)) == ["img:hall.jpg", "img:town", "img:hall", EOQ]

    def test_deterministic(self):
        q = Query("q", "Repeat me twice", ("x.png | a thing",))
        assert tokenize_query(q) == tokenize_query(q)

    def test_always_ends_with_eoq(self):
        q = Query("q", "anything at all")
        assert tokenize_query(q).tokens[-1] == EOQ


class TestTokenizeSection:
    def test_heading_then_text(self):
        s = Section("s", "History", (Segment("text", "born 1900"),))
        assert list(tokenize_section(s)) == ["txt:history", "txt:born", "txt:1900", EOS]

    def test_table_tokens(self):
        s = Section("s", "", (Segment("table", "<table><tr><td>a</td></tr></table>"),))
        assert list(tokenize_section(s)) == [
            "tbl:<table>", "tbl:<tr>", "tbl:<td>", "tbl:a",
            "tbl:</td>", "tbl:</tr>", "tbl:</table>", EOS,
        ]

    def test_empty_heading_contributes_nothing(self):
        s = Section("s", "", (Segment("text", "only body"),))
        assert list(tokenize_section(s)) == ["txt:only", "txt:body", EOS]

    def test_image_segment(self):
        s = Section("s", "", (Segment("image", "mole.jpg | west mole"),))
        assert list(tokenize_section(s)) == ["img:mole.jpg", "img:west", "img:mole", EOS]

    def test_always_ends_with_eos(self):
        s = Section("s", "h", (Segment("text", "x"),))
        assert tokenize_section(s).tokens[-1] == EOS


class TestTokenStreamInvariants:
    def test_reserved_not_repeated(self):
        with pytest.raises(ValueError):
            TokenStream(("txt:a", EOQ, EOQ))

    def test_eoq_must_be_final(self):
        with pytest.raises(ValueError):
            TokenStream((EOQ, "txt:a"))

    def test_prefixes_partition_token_space(self):
        text = Section("s", "", (Segment("text", "history"),))
        table = Section("s", "", (Segment("table", "<table><tr><td>history</td></tr></table>"),))
        text_tokens = set(tokenize_section(text)) - {EOS}
        table_tokens = set(tokenize_section(table)) - {EOS}
        assert text_tokens.isdisjoint(table_tokens)


class TestHashFeatures:
    def test_empty_stream(self):
        assert hash_features([], 16).entries == {}

    def test_accumulation(self):
        fv = hash_features(["txt:a", "txt:a"], 16)
        assert len(fv.entries) == 1
        (count,) = fv.entries.values()
        assert abs(count) == 2

    def test_permutation_invariant(self):
        tokens = ["txt:a", "txt:b", "txt:c", "txt:a"]
        assert hash_features(tokens, 64) == hash_features(tokens[::-1], 64)

    def test_opposite_signs_cancel(self):
        # Two tokens in the same bucket with opposite signs must vanish.
        fv_a = hash_features(["txt:who"], 2)
        fv_b = hash_features(["txt:designed"], 2)
        ((b_a, c_a),) = fv_a.entries.items()
        ((b_b, c_b),) = fv_b.entries.items()
        if b_a == b_b and c_a == -c_b:
            assert hash_features(["txt:who", "txt:designed"], 2).entries == {}

    def test_requires_power_of_two(self):
        with pytest.raises(ValueError):
            hash_features(["txt:a"], 48)

    def test_golden_hashes(self):
        for token, bucket, count in GOLDEN_HASHES:
            fv = hash_features([token], 1024)
            assert fv.entries == {bucket: count}, token


class TestEncode:
    def test_zero_vector(self):
        params = init_encoder_params(d_emb=4, F=16, seed=0)
        emb = encode(params, FeatureVector(16, {}), "query")
        assert np.array_equal(emb.values, np.zeros(4))

    def test_basis_case(self):
        params = init_encoder_params(d_emb=8, F=8, seed=0)
        params.W_Q = np.eye(8)
        emb = encode(params, FeatureVector(8, {3: 2}), "query")
        expected = np.zeros(8)
        expected[3] = 2.0
        assert np.array_equal(emb.values, expected)

    def test_scaling_linearity(self):
        params = init_encoder_params(d_emb=6, F=32, seed=1)
        fv = FeatureVector(32, {1: 2, 7: -1, 30: 3})
        scaled = FeatureVector(32, {b: 5 * c for b, c in fv.entries.items()})
        np.testing.assert_allclose(
            encode(params, scaled, "section").values,
            5.0 * encode(params, fv, "section").values,
            rtol=1e-12,
        )

    def test_additive_linearity(self):
        rng = np.random.default_rng(3)
        params = init_encoder_params(d_emb=8, F=64, seed=2)
        for _ in range(50):
            a = {int(b): int(c) for b, c in zip(rng.integers(0, 64, 5), rng.integers(-3, 4, 5)) if c}
            b = {int(k): int(c) for k, c in zip(rng.integers(0, 64, 5), rng.integers(-3, 4, 5)) if c}
            merged = dict(a)
            for k, c in b.items():
                merged[k] = merged.get(k, 0) + c
            merged = {k: c for k, c in merged.items() if c}
            lhs = encode(params, FeatureVector(64, merged), "query").values
            rhs = (
                encode(params, FeatureVector(64, a), "query").values
                + encode(params, FeatureVector(64, b), "query").values
            )
            np.testing.assert_allclose(lhs, rhs, rtol=1e-6, atol=1e-12)

    def test_dim_mismatch(self):
        params = init_encoder_params(d_emb=4, F=16, seed=0)
        with pytest.raises(DimMismatch):
            encode(params, FeatureVector(32, {1: 1}), "query")

    def test_roles_use_different_matrices(self):
        params = init_encoder_params(d_emb=4, F=16, seed=0)
        fv = FeatureVector(16, {2: 1})
        assert not np.array_equal(
            encode(params, fv, "query").values, encode(params, fv, "section").values
        )


class TestHashEncoderBackend:
    def test_dims_and_roles(self):
        backend = HashEncoderBackend(init_encoder_params(d_emb=12, F=128, seed=0))
        assert backend.dim() == 12
        q = backend.encode_query(Query("q", "a question"))
        assert q.role == "query" and q.dim == 12
        (s,) = backend.encode_sections([Section("s", "", (Segment("text", "body"),))])
        assert s.role == "section" and s.dim == 12

    def test_init_is_seeded(self):
        a = init_encoder_params(d_emb=4, F=16, seed=9)
        b = init_encoder_params(d_emb=4, F=16, seed=9)
        assert np.array_equal(a.W_Q, b.W_Q) and np.array_equal(a.W_S, b.W_S)
        c = init_encoder_params(d_emb=4, F=16, seed=10)
        assert not np.array_equal(a.W_Q, c.W_Q)

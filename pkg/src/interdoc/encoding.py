"""Modality-prefixed tokenization, signed feature hashing, and the
reference linear dual encoder.

The hash encoder is the desk-scale stand-in for a heavyweight multimodal
encoder: tokens are hashed into a signed count vector and projected by a
trainable matrix (one per role).  Reserved role tokens hash like ordinary
tokens here; their special semantics belong to the remote backend.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .corpus import Query, Section
from .errors import DimMismatch

EOQ = "[EOQ]"
EOS = "[EOS]"
SEP = "[SEP]"
RESERVED_TOKENS = (EOQ, EOS, SEP)

PREFIX_TEXT = "txt:"
PREFIX_IMAGE = "img:"
PREFIX_TABLE = "tbl:"

DEFAULT_FEATURE_DIM = 65536
DEFAULT_EMBED_DIM = 256

_WORD_RE = re.compile(r"[a-z0-9]+")
_TABLE_RE = re.compile(r"<[^>]+>|[^<\s]+")


@dataclass(frozen=True)
class TokenStream:
    tokens: Tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        for reserved in RESERVED_TOKENS:
            count = self.tokens.count(reserved)
            if count > 1:
                raise ValueError(f"reserved token {reserved} appears {count} times")
        for terminal in (EOQ, EOS):
            if terminal in self.tokens and self.tokens[-1] != terminal:
                raise ValueError(f"{terminal} must be the final token")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class FeatureVector:
    dim: int
    entries: Dict[int, int]

    def __post_init__(self):
        if any(b < 0 or b >= self.dim for b in self.entries):
            raise ValueError("bucket out of range")


@dataclass
class EncoderParams:
    d_emb: int
    F: int
    W_Q: np.ndarray
    W_S: np.ndarray
    seed: int


@dataclass(frozen=True)
class Embedding:
    role: str
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or not np.all(np.isfinite(values)):
            raise ValueError("embedding must be a finite 1-D vector")
        object.__setattr__(self, "values", values)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def _text_tokens(text: str) -> List[str]:
    return _WORD_RE.findall(text.lower())


def _image_tokens(content: str) -> List[str]:
    """Tokens for an image reference of the form "src | alt"."""
    src, _, alt = content.partition("|")
    tokens = []
    src = src.strip().lower()
    if src:
        tokens.append(src)
    tokens.extend(_text_tokens(alt))
    return tokens


def _table_tokens(content: str) -> List[str]:
    return _TABLE_RE.findall(content.lower())


def tokenize_query(query: Query) -> TokenStream:
    tokens = [PREFIX_TEXT + t for t in _text_tokens(query.text)]
    for ref in query.image_refs:
        tokens.extend(PREFIX_IMAGE + t for t in _image_tokens(ref))
    tokens.append(EOQ)
    return TokenStream(tuple(tokens))


def tokenize_section(section: Section) -> TokenStream:
    tokens = [PREFIX_TEXT + t for t in _text_tokens(section.heading)]
    for segment in section.segments:
        if segment.kind == "text":
            tokens.extend(PREFIX_TEXT + t for t in _text_tokens(segment.content))
        elif segment.kind == "image":
            tokens.extend(PREFIX_IMAGE + t for t in _image_tokens(segment.content))
        else:
            tokens.extend(PREFIX_TABLE + t for t in _table_tokens(segment.content))
    tokens.append(EOS)
    return TokenStream(tuple(tokens))


@lru_cache(maxsize=1 << 20)
def _token_hashes(token: str) -> Tuple[int, int]:
    """Two independent platform-stable 64-bit hashes of a token."""
    data = token.encode("utf-8")
    bucket = hashlib.blake2b(data, digest_size=8, key=b"bucket").digest()
    sign = hashlib.blake2b(data, digest_size=8, key=b"sign").digest()
    return (
        int.from_bytes(bucket, "little"),
        int.from_bytes(sign, "little"),
    )


def hash_features(stream: Iterable[str], F: int) -> FeatureVector:
    """Signed hash counts: bucket = H1(t) mod F, sign from H2(t) parity."""
    if F < 2 or F & (F - 1):
        raise ValueError(f"F must be a power of two >= 2, got {F}")
    entries: Dict[int, int] = {}
    mask = F - 1
    for token in stream:
        h_bucket, h_sign = _token_hashes(token)
        bucket = h_bucket & mask
        sign = 1 if h_sign % 2 == 0 else -1
        total = entries.get(bucket, 0) + sign
        if total:
            entries[bucket] = total
        else:
            entries.pop(bucket, None)
    return FeatureVector(dim=F, entries=entries)


def init_encoder_params(
    d_emb: int = DEFAULT_EMBED_DIM, F: int = DEFAULT_FEATURE_DIM, seed: int = 0
) -> EncoderParams:
    """Fresh projection matrices, i.i.d. uniform in [-1/sqrt(F), 1/sqrt(F)]."""
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(F)
    w_q = rng.uniform(-bound, bound, size=(d_emb, F))
    w_s = rng.uniform(-bound, bound, size=(d_emb, F))
    return EncoderParams(d_emb=d_emb, F=F, W_Q=w_q, W_S=w_s, seed=seed)


def _sparse_columns(fv: FeatureVector) -> Tuple[np.ndarray, np.ndarray]:
    buckets = np.fromiter(fv.entries.keys(), dtype=np.int64, count=len(fv.entries))
    counts = np.fromiter(fv.entries.values(), dtype=np.float64, count=len(fv.entries))
    return buckets, counts


def encode(params: EncoderParams, fv: FeatureVector, role: str) -> Embedding:
    """Project a hashed feature vector with the role's matrix."""
    if fv.dim != params.F:
        raise DimMismatch(f"feature dim {fv.dim} != encoder F {params.F}")
    if role == "query":
        w = params.W_Q
    elif role == "section":
        w = params.W_S
    else:
        raise ValueError(f"unknown role {role!r}")
    if not fv.entries:
        return Embedding(role, np.zeros(params.d_emb))
    buckets, counts = _sparse_columns(fv)
    return Embedding(role, w[:, buckets] @ counts)


class EncoderBackend:
    """Contract shared by the reference encoder and the remote client."""

    def dim(self) -> int:
        raise NotImplementedError

    def encode_query(self, query: Query) -> Embedding:
        raise NotImplementedError

    def encode_sections(self, sections: Sequence[Section]) -> List[Embedding]:
        raise NotImplementedError


class HashEncoderBackend(EncoderBackend):
    """Reference backend: tokenize, hash, and apply the linear projection."""

    def __init__(self, params: EncoderParams):
        self.params = params

    def dim(self) -> int:
        return self.params.d_emb

    def encode_query(self, query: Query) -> Embedding:
        fv = hash_features(tokenize_query(query), self.params.F)
        return encode(self.params, fv, "query")

    def encode_sections(self, sections: Sequence[Section]) -> List[Embedding]:
        return [
            encode(self.params, hash_features(tokenize_section(s), self.params.F), "section")
            for s in sections
        ]

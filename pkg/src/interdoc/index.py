"""Document embedding aggregation, exact cosine search, and index persistence.

A document embedding is the mean of its section embeddings; summation runs
in a canonical sorted row order so the result is bit-identical under any
section permutation.  Search is exact (full scan); desk-scale corpora make
approximate methods unnecessary.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Corpus, Document
from .encoding import Embedding, EncoderBackend
from .errors import BadMagic, DimMismatch, EncodeFailure, Truncated, VersionMismatch

INDEX_MAGIC = b"IDIX"
INDEX_VERSION = 1

# Relative tolerance for the stored-norm invariant.
NORM_RTOL = 1e-6


@dataclass
class Index:
    dim: int
    rows: np.ndarray          # N x dim, float32
    doc_ids: List[str]
    norms: np.ndarray         # N, float64

    def __post_init__(self):
        if not (len(self.doc_ids) == self.rows.shape[0] == self.norms.shape[0]):
            raise DimMismatch("rows, doc_ids and norms must have equal length")
        if len(set(self.doc_ids)) != len(self.doc_ids):
            raise DimMismatch("doc_ids must be unique")

    def __len__(self) -> int:
        return self.rows.shape[0]

    def zero_norm_ids(self) -> List[str]:
        return [doc_id for doc_id, n in zip(self.doc_ids, self.norms) if n == 0.0]


def _sorted_mean(rows: np.ndarray) -> np.ndarray:
    """Mean of rows summed in lexicographic row order (permutation-stable)."""
    if rows.shape[0] == 1:
        return rows[0].copy()
    order = np.lexsort(rows.T[::-1])
    return rows[order].sum(axis=0) / rows.shape[0]


def embed_document(
    backend: EncoderBackend,
    doc: Document,
    section_limit: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Embedding:
    """Section-mean document embedding, optionally over a random subset.

    When ``section_limit`` is smaller than the section count, that many
    sections are sampled uniformly without replacement using ``rng``.
    """
    sections = list(doc.sections)
    if section_limit is not None:
        if section_limit < 1:
            raise ValueError("section_limit must be >= 1")
        if section_limit < len(sections):
            if rng is None:
                raise ValueError("rng is required when sampling sections")
            picks = rng.choice(len(sections), size=section_limit, replace=False)
            sections = [sections[i] for i in picks]
    embeddings = backend.encode_sections(sections)
    rows = np.stack([e.values for e in embeddings])
    return Embedding("document", _sorted_mean(rows))


def build_index(
    corpus: Corpus,
    backend: EncoderBackend,
    section_limit: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> Index:
    """One row per document in corpus order; zero-norm rows are permitted
    (flagged via :meth:`Index.zero_norm_ids`)."""
    if len(corpus) == 0:
        raise ValueError("corpus is empty")
    rows = np.empty((len(corpus), backend.dim()), dtype=np.float32)
    doc_ids = []
    for i, doc in enumerate(corpus):
        try:
            rows[i] = embed_document(backend, doc, section_limit=section_limit, rng=rng).values
        except Exception as exc:
            raise EncodeFailure(f"document {doc.doc_id!r}: {exc}") from exc
        doc_ids.append(doc.doc_id)
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    return Index(dim=backend.dim(), rows=rows, doc_ids=doc_ids, norms=norms)


def search(index: Index, zq: Embedding, k: int) -> List[Tuple[str, float]]:
    """Top-min(k, N) documents by cosine similarity, descending.

    Zero-norm rows (and a zero-norm query) score -inf and never outrank a
    finite score; ties break by ascending doc_id.
    """
    if zq.dim != index.dim:
        raise DimMismatch(f"query dim {zq.dim} != index dim {index.dim}")
    if k < 1:
        raise ValueError("k must be >= 1")
    qnorm = float(np.linalg.norm(zq.values))
    scores = np.full(len(index), -np.inf)
    if qnorm > 0.0:
        live = index.norms > 0.0
        dots = index.rows[live].astype(np.float64) @ zq.values
        scores[live] = dots / (index.norms[live] * qnorm)
    order = np.lexsort((np.array(index.doc_ids), -scores))
    top = order[: min(k, len(index))]
    return [(index.doc_ids[i], float(scores[i])) for i in top]


def save_index(index: Index, path) -> None:
    with open(path, "wb") as handle:
        handle.write(INDEX_MAGIC)
        handle.write(struct.pack("<IIQ", INDEX_VERSION, index.dim, len(index)))
        for doc_id, row in zip(index.doc_ids, index.rows):
            encoded = doc_id.encode("utf-8")
            handle.write(struct.pack("<I", len(encoded)))
            handle.write(encoded)
            handle.write(row.astype("<f4").tobytes())


def _read_exact(handle, n: int) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise Truncated(f"expected {n} bytes, got {len(data)}")
    return data


def load_index(path) -> Index:
    with open(path, "rb") as handle:
        magic = _read_exact(handle, 4)
        if magic != INDEX_MAGIC:
            raise BadMagic(magic.hex())
        version, dim, count = struct.unpack("<IIQ", _read_exact(handle, 16))
        if version != INDEX_VERSION:
            raise VersionMismatch(f"index version {version}")
        rows = np.empty((count, dim), dtype=np.float32)
        doc_ids = []
        for i in range(count):
            (id_len,) = struct.unpack("<I", _read_exact(handle, 4))
            doc_ids.append(_read_exact(handle, id_len).decode("utf-8"))
            rows[i] = np.frombuffer(_read_exact(handle, 4 * dim), dtype="<f4")
    norms = np.linalg.norm(rows.astype(np.float64), axis=1)
    return Index(dim=dim, rows=rows, doc_ids=doc_ids, norms=norms)

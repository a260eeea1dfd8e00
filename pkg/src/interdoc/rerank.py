"""Query-section pair scoring and section reranking.

The pair representation has three hashed blocks: query features, section
features, and their elementwise overlap (min of absolute counts).  The
overlap block is what lets a linear classifier express query-section
interaction; without it the concatenation carries no relevance signal.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .corpus import Document, Query, Section
from .encoding import EOQ, SEP, FeatureVector, hash_features, tokenize_query, tokenize_section
from .errors import DimMismatch


@dataclass
class RerankerParams:
    F: int
    w: np.ndarray          # length 3F
    b: float
    seed: int


def init_reranker_params(F: int, seed: int = 0, init: str = "zeros") -> RerankerParams:
    if init == "zeros":
        w = np.zeros(3 * F)
    elif init == "random":
        w = np.random.default_rng(seed).normal(0.0, 1.0, size=3 * F)
    else:
        raise ValueError(f"unknown init {init!r}")
    return RerankerParams(F=F, w=w, b=0.0, seed=seed)


def query_block(query: Query, F: int) -> Dict[int, int]:
    """Hashed query features with the query terminal swapped for [SEP]."""
    tokens = [SEP if t == EOQ else t for t in tokenize_query(query)]
    return hash_features(tokens, F).entries


def section_block(section: Section, F: int) -> Dict[int, int]:
    return hash_features(tokenize_section(section), F).entries


def combine_blocks(qb: Dict[int, int], sb: Dict[int, int], F: int) -> FeatureVector:
    """Lay out query, section, and overlap blocks at offsets 0, F, 2F."""
    entries: Dict[int, int] = {}
    for bucket, count in qb.items():
        entries[bucket] = count
    for bucket, count in sb.items():
        entries[F + bucket] = count
    for bucket, count in qb.items():
        other = sb.get(bucket)
        if other is not None:
            overlap = min(abs(count), abs(other))
            if overlap:
                entries[2 * F + bucket] = overlap
    return FeatureVector(dim=3 * F, entries=entries)


def pair_features(query: Query, section: Section, F: int) -> FeatureVector:
    return combine_blocks(query_block(query, F), section_block(section, F), F)


def sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def score_features(params: RerankerParams, fv: FeatureVector) -> float:
    if fv.dim != 3 * params.F:
        raise DimMismatch(f"feature dim {fv.dim} != 3F = {3 * params.F}")
    z = params.b
    for bucket, count in fv.entries.items():
        z += params.w[bucket] * count
    return sigmoid(z)


def score_pair(params: RerankerParams, query: Query, section: Section) -> float:
    """Relevance probability in (0, 1) for one query-section pair."""
    return score_features(params, pair_features(query, section, params.F))


def rerank_sections(
    params: RerankerParams, query: Query, docs: Sequence[Document]
) -> List[Tuple[str, str, float]]:
    """Score every section of the retrieved documents, best first.

    Ties break by (doc_id, section_id) ascending, so the ranking is
    independent of input document order.
    """
    qb = query_block(query, params.F)
    scored = []
    for doc in docs:
        for section in doc.sections:
            fv = combine_blocks(qb, section_block(section, params.F), params.F)
            scored.append((doc.doc_id, section.section_id, score_features(params, fv)))
    scored.sort(key=lambda item: (-item[2], item[0], item[1]))
    return scored


def classify_gold_doc(params: RerankerParams, query: Query, doc: Document) -> str:
    """Highest-scoring section of a single document."""
    return rerank_sections(params, query, [doc])[0][1]

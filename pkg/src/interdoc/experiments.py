"""Experiment runners: document/section evaluation, format and objective
ablations, granularity comparison, and learning curves.

Every runner is deterministic given (config, seed); directional comparisons
across seeds are left to the caller (median of several seeds absorbs
training variance).
"""
from __future__ import annotations

import dataclasses
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Corpus, DocFormat, Document, QRel, Query, apply_format
from .encoding import EncoderBackend, HashEncoderBackend
from .errors import DanglingReference
from .index import Index, build_index, search
from .metrics import EvalReport, build_report
from .rerank import RerankerParams, classify_gold_doc, rerank_sections
from .synthetic import SynthConfig, gen_synthetic, split_queries
from .training import Hyperparams, train_reranker, train_retriever

DOC_KS = (1, 10, 20, 100)
SECTION_KS = (1, 10, 20)


def _doc_relevance(qrels: Sequence[QRel]) -> Dict[str, set]:
    relevant: Dict[str, set] = {}
    for r in qrels:
        relevant.setdefault(r.query_id, set()).add(r.doc_id)
    return relevant


def _section_relevance(qrels: Sequence[QRel]) -> Dict[str, set]:
    relevant: Dict[str, set] = {}
    for r in qrels:
        if r.section_id is not None:
            relevant.setdefault(r.query_id, set()).add((r.doc_id, r.section_id))
    return relevant


def run_document_eval(
    index: Index,
    backend: EncoderBackend,
    queries: Sequence[Query],
    qrels: Sequence[QRel],
    ks: Sequence[int] = DOC_KS,
    config: Optional[dict] = None,
    seed: int = 0,
) -> EvalReport:
    """Search every query against the index and report R@K / MRR@10."""
    relevant = _doc_relevance(qrels)
    depth = max(max(ks), 10)
    rows = []
    for q in queries:
        if not relevant.get(q.query_id):
            raise DanglingReference(f"query {q.query_id!r} has no relevant documents")
        ranked = [doc_id for doc_id, _ in search(index, backend.encode_query(q), depth)]
        rows.append({"query_id": q.query_id, "ranked": ranked, "relevant": relevant[q.query_id]})
    return build_report(rows, ks, config or {"mode": "document"}, seed)


def run_section_eval(
    corpus: Corpus,
    index: Index,
    backend: EncoderBackend,
    reranker: RerankerParams,
    queries: Sequence[Query],
    qrels: Sequence[QRel],
    pool: int = 25,
    ks: Sequence[int] = SECTION_KS,
    config: Optional[dict] = None,
    seed: int = 0,
) -> EvalReport:
    """Document retrieval, then rerank all sections of the top-``pool`` docs."""
    relevant = _section_relevance(qrels)
    rows = []
    for q in queries:
        if not relevant.get(q.query_id):
            raise DanglingReference(f"query {q.query_id!r} has no relevant sections")
        hits = search(index, backend.encode_query(q), pool)
        docs = [corpus.get(doc_id) for doc_id, _ in hits]
        ranked = [(d, s) for d, s, _ in rerank_sections(reranker, q, docs)]
        rows.append({"query_id": q.query_id, "ranked": ranked, "relevant": relevant[q.query_id]})
    return build_report(rows, ks, config or {"mode": "section", "pool": pool}, seed)


def run_classify_eval(
    corpus: Corpus,
    reranker: RerankerParams,
    queries: Sequence[Query],
    qrels: Sequence[QRel],
    config: Optional[dict] = None,
    seed: int = 0,
) -> EvalReport:
    """Acc@1 of picking the gold section within the gold document."""
    gold: Dict[str, QRel] = {}
    for r in qrels:
        if r.section_id is not None and r.query_id not in gold:
            gold[r.query_id] = r
    hits = 0
    per_query = []
    for q in queries:
        r = gold.get(q.query_id)
        if r is None:
            raise DanglingReference(f"query {q.query_id!r} has no section-level label")
        predicted = classify_gold_doc(reranker, q, corpus.get(r.doc_id))
        correct = int(predicted == r.section_id)
        hits += correct
        per_query.append({"query_id": q.query_id, "predicted": predicted, "correct": correct})
    metrics = {"Acc@1": hits / len(per_query)}
    return EvalReport(metrics=metrics, per_query=per_query, config=config or {"mode": "classify"}, seed=seed)


# -- format ablation -----------------------------------------------------------


def format_view(corpus: Corpus, fmt: DocFormat) -> Corpus:
    return Corpus(tuple(apply_format(doc, fmt) for doc in corpus))


def run_format_ablation(
    corpus: Corpus,
    train_queries: Sequence[Query],
    eval_queries: Sequence[Query],
    qrels: Sequence[QRel],
    formats: Sequence[DocFormat],
    hp: Hyperparams,
    ks: Sequence[int] = DOC_KS,
) -> List[dict]:
    """Train and evaluate one retriever per document format.

    Returns one row per format, sorted by MRR@10 descending.
    """
    rows = []
    for fmt in formats:
        fmt = DocFormat(fmt)
        view = format_view(corpus, fmt)
        params = train_retriever(view, train_queries, qrels, hp)
        backend = HashEncoderBackend(params)
        index = build_index(view, backend)
        report = run_document_eval(
            index, backend, eval_queries, qrels, ks=ks,
            config={"mode": "ablate-formats", "format": fmt.value}, seed=hp.seed,
        )
        rows.append({"format": fmt.value, **report.metrics})
    rows.sort(key=lambda r: -r["MRR@10"])
    return rows


# -- granularity comparison ------------------------------------------------------


def section_corpus(corpus: Corpus) -> Tuple[Corpus, Dict[str, Tuple[str, str]]]:
    """One single-section pseudo-document per section, for passage-level runs."""
    pseudo_docs = []
    mapping: Dict[str, Tuple[str, str]] = {}
    for doc in corpus:
        for section in doc.sections:
            pseudo_id = f"{doc.doc_id}#{section.section_id}"
            pseudo_docs.append(Document(doc_id=pseudo_id, title=doc.title, sections=(section,)))
            mapping[pseudo_id] = (doc.doc_id, section.section_id)
    return Corpus(tuple(pseudo_docs)), mapping


def _pseudo_qrels(qrels: Sequence[QRel]) -> List[QRel]:
    return [
        QRel(r.query_id, f"{r.doc_id}#{r.section_id}", r.section_id)
        for r in qrels
        if r.section_id is not None
    ]


def run_granularity_comparison(
    corpus: Corpus,
    train_queries: Sequence[Query],
    eval_queries: Sequence[Query],
    qrels: Sequence[QRel],
    hp: Hyperparams,
    reranker_hp: Optional[Hyperparams] = None,
    pool: int = 25,
    ks: Sequence[int] = SECTION_KS,
) -> List[dict]:
    """Section-level metrics for three retrieval strategies:

    - document: document retrieval + rerank of the retrieved docs' sections
    - passage: section-unit retrieval + rerank of the retrieved sections
    - passage_norerank: section-unit retrieval ranked by cosine alone
    """
    reranker_hp = reranker_hp or hp
    relevant = _section_relevance(qrels)
    depth = max(max(ks), 10, pool)

    doc_params = train_retriever(corpus, train_queries, qrels, hp)
    doc_backend = HashEncoderBackend(doc_params)
    doc_index = build_index(corpus, doc_backend)
    reranker = train_reranker(corpus, train_queries, qrels, reranker_hp)

    pseudo, mapping = section_corpus(corpus)
    pq = _pseudo_qrels(qrels)
    passage_params = train_retriever(pseudo, train_queries, pq, hp)
    passage_backend = HashEncoderBackend(passage_params)
    passage_index = build_index(pseudo, passage_backend)

    doc_rows, passage_rows, raw_rows = [], [], []
    for q in eval_queries:
        rel = relevant[q.query_id]

        hits = search(doc_index, doc_backend.encode_query(q), pool)
        docs = [corpus.get(doc_id) for doc_id, _ in hits]
        ranked = [(d, s) for d, s, _ in rerank_sections(reranker, q, docs)]
        doc_rows.append({"query_id": q.query_id, "ranked": ranked, "relevant": rel})

        pseudo_hits = search(passage_index, passage_backend.encode_query(q), depth)
        raw_ranked = [mapping[pid] for pid, _ in pseudo_hits]
        raw_rows.append({"query_id": q.query_id, "ranked": raw_ranked, "relevant": rel})

        pool_sections = [pseudo.get(pid) for pid, _ in pseudo_hits[:pool]]
        reranked = [mapping[pid] for pid, _, _ in rerank_sections(reranker, q, pool_sections)]
        passage_rows.append({"query_id": q.query_id, "ranked": reranked, "relevant": rel})

    rows = []
    for name, data in (
        ("document", doc_rows),
        ("passage", passage_rows),
        ("passage_norerank", raw_rows),
    ):
        report = build_report(data, ks, {"mode": "granularity", "strategy": name}, hp.seed)
        rows.append({"strategy": name, **report.metrics})
    return rows


# -- reranker ablations -----------------------------------------------------------


def run_negative_ablation(
    corpus: Corpus,
    train_queries: Sequence[Query],
    eval_queries: Sequence[Query],
    qrels: Sequence[QRel],
    hp: Hyperparams,
    reranker_hp: Hyperparams,
    strategies: Sequence[str] = ("in_document", "in_batch", "top_k"),
    pool: int = 25,
) -> List[dict]:
    """Section metrics per negative-sampling strategy (shared retriever)."""
    params = train_retriever(corpus, train_queries, qrels, hp)
    backend = HashEncoderBackend(params)
    index = build_index(corpus, backend)
    rows = []
    for strategy in strategies:
        rr_hp = dataclasses.replace(reranker_hp, negative_strategy=strategy)
        reranker = train_reranker(
            corpus, train_queries, qrels, rr_hp, index=index, backend=backend
        )
        report = run_section_eval(
            corpus, index, backend, reranker, eval_queries, qrels, pool=pool,
            config={"mode": "negatives", "strategy": strategy}, seed=hp.seed,
        )
        rows.append({"strategy": strategy, **report.metrics})
    return rows


def run_objective_ablation(
    corpus: Corpus,
    train_queries: Sequence[Query],
    eval_queries: Sequence[Query],
    qrels: Sequence[QRel],
    hp: Hyperparams,
    reranker_hp: Hyperparams,
    objectives: Sequence[str] = ("section_bce", "contrastive", "document_bce"),
    pool: int = 25,
) -> List[dict]:
    """Section metrics per reranker training objective (shared retriever)."""
    params = train_retriever(corpus, train_queries, qrels, hp)
    backend = HashEncoderBackend(params)
    index = build_index(corpus, backend)
    rows = []
    for objective in objectives:
        reranker = train_reranker(corpus, train_queries, qrels, reranker_hp, objective=objective)
        report = run_section_eval(
            corpus, index, backend, reranker, eval_queries, qrels, pool=pool,
            config={"mode": "objectives", "objective": objective}, seed=hp.seed,
        )
        rows.append({"objective": objective, **report.metrics})
    return rows


# -- learning curve ----------------------------------------------------------------


def subsample_queries(
    queries: Sequence[Query], ratio: float, seed: int
) -> List[Query]:
    """Deterministic subsample preserving original order; ratio 1.0 is identity."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError("ratio must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    size = max(1, round(ratio * len(queries)))
    picks = sorted(rng.choice(len(queries), size=size, replace=False).tolist())
    return [queries[i] for i in picks]


def learning_curve(
    corpus: Corpus,
    train_queries: Sequence[Query],
    eval_queries: Sequence[Query],
    qrels: Sequence[QRel],
    ratios: Sequence[float],
    hp: Hyperparams,
    ks: Sequence[int] = DOC_KS,
) -> List[dict]:
    """Train at several training-set sizes; no monotonicity is implied."""
    rows = []
    for ratio in ratios:
        subset = subsample_queries(train_queries, ratio, hp.seed)
        params = train_retriever(corpus, subset, qrels, hp)
        backend = HashEncoderBackend(params)
        index = build_index(corpus, backend)
        report = run_document_eval(
            index, backend, eval_queries, qrels, ks=ks,
            config={"mode": "learning-curve", "ratio": ratio}, seed=hp.seed,
        )
        rows.append({"ratio": ratio, **report.metrics})
    return rows


# -- end-to-end pipeline --------------------------------------------------------------


def document_pipeline(
    synth_cfg: SynthConfig, hp: Hyperparams, ks: Sequence[int] = DOC_KS
) -> EvalReport:
    """synth -> train -> index -> eval, reported on the held-out query half."""
    corpus, queries, qrels = gen_synthetic(synth_cfg)
    train_queries, eval_queries = split_queries(queries)
    params = train_retriever(corpus, train_queries, qrels, hp)
    backend = HashEncoderBackend(params)
    index = build_index(corpus, backend)
    return run_document_eval(
        index, backend, eval_queries, qrels, ks=ks,
        config={"mode": "pipeline", "synth": dataclasses.asdict(synth_cfg)}, seed=hp.seed,
    )

"""Training objectives, analytic gradients, and the optimization loops.

The retriever loss is a softmax cross-entropy over in-batch cosine
similarities (temperature fixed at 1, matching the objective as defined);
the reranker default is a per-section binary cross-entropy weighted by
1/(B * S_i).  Both gradients are exact and verified against central finite
differences.  Training is bit-reproducible for a fixed seed: shuffling,
section sampling, and gradient reduction all run in fixed order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .corpus import Corpus, Document, QRel, Query, Section
from .encoding import (
    EncoderParams,
    hash_features,
    init_encoder_params,
    tokenize_query,
    tokenize_section,
)
from .errors import (
    BadMagic,
    DanglingReference,
    DataError,
    InsufficientNegatives,
    ShapeMismatch,
    Truncated,
    VersionMismatch,
    ZeroNormEmbedding,
)
from .index import Index, search
from .rerank import RerankerParams, combine_blocks, init_reranker_params, query_block, section_block

NEGATIVE_STRATEGIES = ("in_document", "in_batch", "top_k")
RERANKER_OBJECTIVES = ("section_bce", "contrastive", "document_bce")

CHECKPOINT_MAGIC = b"IDCK"
CHECKPOINT_VERSION = 1
_ROLE_RETRIEVER = 0
_ROLE_RERANKER = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class Hyperparams:
    B: int = 32
    lr: float = 0.05
    epochs: int = 20
    sections_per_doc: int = 4
    F: int = 65536
    d_emb: int = 256
    seed: int = 0
    negative_strategy: str = "in_document"
    top_k_pool: int = 25
    bce_eps: float = 1e-7

    def __post_init__(self):
        if self.B < 1:
            raise ValueError("B must be >= 1")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.sections_per_doc < 1:
            raise ValueError("sections_per_doc must be >= 1")
        if self.negative_strategy not in NEGATIVE_STRATEGIES:
            raise ValueError(f"unknown negative strategy {self.negative_strategy!r}")


@dataclass(frozen=True)
class RerankExample:
    query: Query
    section: Section
    label: int
    source_doc_id: str


# -- losses -------------------------------------------------------------------


def _normalized(rows: np.ndarray, role: str) -> Tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    for i, n in enumerate(norms):
        if n == 0.0:
            raise ZeroNormEmbedding(role, i)
    return rows / norms[:, None], norms


def contrastive_loss(ZQ: np.ndarray, ZD: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray]:
    """In-batch softmax cross-entropy over cosine similarities.

    Row i of ``ZQ`` pairs with row i of ``ZD``; every other row j acts as a
    negative.  Returns the loss and exact gradients w.r.t. both inputs.
    """
    ZQ = np.asarray(ZQ, dtype=np.float64)
    ZD = np.asarray(ZD, dtype=np.float64)
    if ZQ.shape != ZD.shape:
        raise ShapeMismatch(f"{ZQ.shape} vs {ZD.shape}")
    B = ZQ.shape[0]
    Qh, qnorms = _normalized(ZQ, "query")
    Dh, dnorms = _normalized(ZD, "document")
    S = Qh @ Dh.T
    m = S.max(axis=1, keepdims=True)
    E = np.exp(S - m)
    Z = E.sum(axis=1)
    log_p = np.diag(S) - m[:, 0] - np.log(Z)
    loss = float(-log_p.mean())

    P = E / Z[:, None]
    G = (P - np.eye(B)) / B
    dQh = G @ Dh
    dDh = G.T @ Qh
    dZQ = (dQh - (dQh * Qh).sum(axis=1, keepdims=True) * Qh) / qnorms[:, None]
    dZD = (dDh - (dDh * Dh).sum(axis=1, keepdims=True) * Dh) / dnorms[:, None]
    return loss, dZQ, dZD


def bce_loss_term(y: float, y_hat: float) -> float:
    return -(y * np.log(y_hat) + (1.0 - y) * np.log(1.0 - y_hat))


def bce_reranker_loss(
    scores: Sequence[np.ndarray], labels: Sequence[np.ndarray]
) -> Tuple[float, List[np.ndarray]]:
    """Binary cross-entropy over per-document section scores.

    Each inner list i is weighted by 1/(B * S_i) where S_i is its length.
    Scores must already lie strictly inside (0, 1); clip before calling.
    """
    if len(scores) != len(labels):
        raise ShapeMismatch(f"{len(scores)} score groups vs {len(labels)} label groups")
    B = len(scores)
    if B == 0:
        raise ShapeMismatch("empty batch")
    loss = 0.0
    grads = []
    for i, (s_i, y_i) in enumerate(zip(scores, labels)):
        s_i = np.asarray(s_i, dtype=np.float64)
        y_i = np.asarray(y_i, dtype=np.float64)
        if s_i.shape != y_i.shape or s_i.ndim != 1 or s_i.size == 0:
            raise ShapeMismatch(f"group {i}: scores {s_i.shape} vs labels {y_i.shape}")
        if np.any(s_i <= 0.0) or np.any(s_i >= 1.0):
            raise ValueError(f"group {i}: scores must lie strictly in (0, 1)")
        weight = 1.0 / (B * s_i.size)
        loss += weight * float(np.sum(-(y_i * np.log(s_i) + (1.0 - y_i) * np.log(1.0 - s_i))))
        grads.append(weight * (s_i - y_i) / (s_i * (1.0 - s_i)))
    return loss, grads


def finite_diff_check(
    loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
    params: np.ndarray,
    eps: float = 1e-4,
    rng: Optional[np.random.Generator] = None,
    num_coords: int = 64,
) -> float:
    """Max relative error between analytic and central-difference gradients
    on a random coordinate subsample."""
    if not 1e-6 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-6, 1e-3]")
    rng = rng or np.random.default_rng(0)
    params = np.asarray(params, dtype=np.float64)
    _, analytic = loss_fn(params)
    analytic = np.asarray(analytic).ravel()
    coords = rng.choice(params.size, size=min(num_coords, params.size), replace=False)
    worst = 0.0
    flat = params.ravel()
    for c in coords:
        bumped = flat.copy()
        bumped[c] += eps
        hi, _ = loss_fn(bumped.reshape(params.shape))
        bumped[c] -= 2 * eps
        lo, _ = loss_fn(bumped.reshape(params.shape))
        numeric = (hi - lo) / (2 * eps)
        err = abs(analytic[c] - numeric) / max(1.0, abs(numeric))
        worst = max(worst, err)
    return worst


# -- negative sampling -------------------------------------------------------


def sample_negatives(
    strategy: str,
    positive: RerankExample,
    batch: Sequence[RerankExample],
    corpus: Corpus,
    index: Optional[Index] = None,
    backend=None,
    top_k_pool: int = 25,
) -> List[RerankExample]:
    """Label-0 examples for one positive, per the configured strategy."""
    if strategy == "in_document":
        doc = corpus.get(positive.source_doc_id)
        others = [s for s in doc.sections if s.section_id != positive.section.section_id]
        if not others:
            raise InsufficientNegatives(positive.source_doc_id)
        return [
            RerankExample(positive.query, s, 0, positive.source_doc_id) for s in others
        ]
    if strategy == "in_batch":
        negatives = []
        for other in batch:
            if other is positive:
                continue
            if (
                other.source_doc_id == positive.source_doc_id
                and other.section.section_id == positive.section.section_id
            ):
                continue
            negatives.append(
                RerankExample(positive.query, other.section, 0, other.source_doc_id)
            )
        return negatives
    if strategy == "top_k":
        if index is None or backend is None:
            raise ValueError("top_k negatives require an index and a backend")
        hits = search(index, backend.encode_query(positive.query), top_k_pool)
        negatives = []
        for doc_id, _ in hits:
            for s in corpus.get(doc_id).sections:
                if doc_id == positive.source_doc_id and s.section_id == positive.section.section_id:
                    continue
                negatives.append(RerankExample(positive.query, s, 0, doc_id))
        return negatives
    raise ValueError(f"unknown negative strategy {strategy!r}")


# -- optimizer ----------------------------------------------------------------


class _Adam:
    """Gradient descent with adaptive moment estimates (standard defaults)."""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
        self.t += 1
        self.m = ADAM_BETA1 * self.m + (1.0 - ADAM_BETA1) * grad
        self.v = ADAM_BETA2 * self.v + (1.0 - ADAM_BETA2) * grad * grad
        m_hat = self.m / (1.0 - ADAM_BETA1 ** self.t)
        v_hat = self.v / (1.0 - ADAM_BETA2 ** self.t)
        param -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


# -- feature plumbing ---------------------------------------------------------

SparseVec = Tuple[np.ndarray, np.ndarray]   # (buckets, counts)


def _as_sparse(entries: Dict[int, int]) -> SparseVec:
    buckets = np.fromiter(entries.keys(), dtype=np.int64, count=len(entries))
    counts = np.fromiter(entries.values(), dtype=np.float64, count=len(entries))
    return buckets, counts


def _mean_sparse(vecs: Sequence[SparseVec]) -> SparseVec:
    combined: Dict[int, float] = {}
    for buckets, counts in vecs:
        for b, c in zip(buckets.tolist(), counts.tolist()):
            combined[b] = combined.get(b, 0.0) + c
    scale = 1.0 / len(vecs)
    buckets = np.fromiter(combined.keys(), dtype=np.int64, count=len(combined))
    counts = np.fromiter(combined.values(), dtype=np.float64, count=len(combined)) * scale
    return buckets, counts


def _project(w: np.ndarray, vec: SparseVec) -> np.ndarray:
    buckets, counts = vec
    if buckets.size == 0:
        return np.zeros(w.shape[0])
    return w[:, buckets] @ counts


def _doc_pairs(queries: Sequence[Query], qrels: Sequence[QRel], corpus: Corpus):
    """(query, doc_id) training pairs, one per distinct relevant document."""
    by_query: Dict[str, List[str]] = {}
    for r in qrels:
        if r.doc_id in corpus:
            docs = by_query.setdefault(r.query_id, [])
            if r.doc_id not in docs:
                docs.append(r.doc_id)
    pairs = []
    for q in queries:
        if q.query_id not in by_query:
            raise DanglingReference(f"query {q.query_id!r} has no relevant document in corpus")
        for doc_id in by_query[q.query_id]:
            pairs.append((q, doc_id))
    return pairs


def _distinct_batches(items, batch_size: int, key) -> List[list]:
    """Greedy batching that keeps at most one item per key within a batch."""
    batches = []
    pending = list(items)
    while pending:
        batch, rest, used = [], [], set()
        for item in pending:
            k = key(item)
            if len(batch) < batch_size and k not in used:
                batch.append(item)
                used.add(k)
            else:
                rest.append(item)
        batches.append(batch)
        pending = rest
    return batches


# -- retriever training -------------------------------------------------------


def train_retriever(
    corpus: Corpus,
    queries: Sequence[Query],
    qrels: Sequence[QRel],
    hp: Hyperparams,
    loss_log: Optional[list] = None,
) -> EncoderParams:
    """Fit the dual-encoder projections on (query, relevant document) pairs."""
    pairs = _doc_pairs(queries, qrels, corpus)
    params = init_encoder_params(hp.d_emb, hp.F, seed=hp.seed)
    shuffle_seed, sample_seed = np.random.SeedSequence(hp.seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    sample_rng = np.random.default_rng(sample_seed)

    query_fv = {
        q.query_id: _as_sparse(hash_features(tokenize_query(q), hp.F).entries) for q, _ in pairs
    }
    section_fvs = {
        doc.doc_id: [
            _as_sparse(hash_features(tokenize_section(s), hp.F).entries) for s in doc.sections
        ]
        for doc in corpus
    }

    adam_q = _Adam(params.W_Q.shape)
    adam_s = _Adam(params.W_S.shape)

    for _ in range(hp.epochs):
        order = shuffle_rng.permutation(len(pairs))
        shuffled = [pairs[i] for i in order]
        epoch_losses = []
        for batch in _distinct_batches(shuffled, hp.B, key=lambda p: p[1]):
            doc_vecs = []
            for _, doc_id in batch:
                fvs = section_fvs[doc_id]
                if hp.sections_per_doc < len(fvs):
                    picks = sample_rng.choice(len(fvs), size=hp.sections_per_doc, replace=False)
                    fvs = [fvs[i] for i in picks]
                doc_vecs.append(_mean_sparse(fvs))
            q_vecs = [query_fv[q.query_id] for q, _ in batch]
            ZQ = np.stack([_project(params.W_Q, v) for v in q_vecs])
            ZD = np.stack([_project(params.W_S, v) for v in doc_vecs])

            loss, dZQ, dZD = contrastive_loss(ZQ, ZD)
            epoch_losses.append(loss)

            grad_q = np.zeros_like(params.W_Q)
            grad_s = np.zeros_like(params.W_S)
            for i, (buckets, counts) in enumerate(q_vecs):
                grad_q[:, buckets] += np.outer(dZQ[i], counts)
            for i, (buckets, counts) in enumerate(doc_vecs):
                grad_s[:, buckets] += np.outer(dZD[i], counts)
            adam_q.step(params.W_Q, grad_q, hp.lr)
            adam_s.step(params.W_S, grad_s, hp.lr)
        if loss_log is not None:
            loss_log.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
    return params


# -- reranker training ---------------------------------------------------------


def _gold_sections(queries: Sequence[Query], qrels: Sequence[QRel], corpus: Corpus):
    """(query, doc, gold section) triples; every query needs a section label."""
    by_query = {}
    for r in qrels:
        if r.section_id is not None and r.query_id not in by_query:
            by_query[r.query_id] = r
    triples = []
    for q in queries:
        r = by_query.get(q.query_id)
        if r is None:
            raise DanglingReference(f"query {q.query_id!r} has no section-level label")
        doc = corpus.get(r.doc_id)
        section = next(s for s in doc.sections if s.section_id == r.section_id)
        triples.append(RerankExample(q, section, 1, r.doc_id))
    return triples


def _merged_section(doc: Document) -> Section:
    segments = tuple(seg for s in doc.sections for seg in s.segments)
    return Section(section_id="__merged__", heading=doc.title, segments=segments)


def train_reranker(
    corpus: Corpus,
    queries: Sequence[Query],
    qrels: Sequence[QRel],
    hp: Hyperparams,
    objective: str = "section_bce",
    index: Optional[Index] = None,
    backend=None,
    loss_log: Optional[list] = None,
) -> RerankerParams:
    """Fit the pair classifier; ``objective`` selects the training loss."""
    if objective not in RERANKER_OBJECTIVES:
        raise ValueError(f"unknown objective {objective!r}")
    positives = _gold_sections(queries, qrels, corpus)
    params = init_reranker_params(hp.F, seed=hp.seed)
    shuffle_rng = np.random.default_rng(np.random.SeedSequence(hp.seed).spawn(1)[0])

    qblocks = {p.query.query_id: query_block(p.query, hp.F) for p in positives}
    sblock_cache: Dict[Tuple[str, str], Dict[int, int]] = {}

    def sblock(doc_id: str, section: Section) -> Dict[int, int]:
        key = (doc_id, section.section_id)
        if key not in sblock_cache:
            sblock_cache[key] = section_block(section, hp.F)
        return sblock_cache[key]

    def feats(example: RerankExample) -> SparseVec:
        fv = combine_blocks(
            qblocks[example.query.query_id], sblock(example.source_doc_id, example.section), hp.F
        )
        return _as_sparse(fv.entries)

    # Static negatives never change across epochs; resolve them once.
    static_negatives: Dict[str, List[RerankExample]] = {}
    if objective in ("section_bce", "contrastive") and hp.negative_strategy in ("in_document", "top_k"):
        for p in positives:
            static_negatives[p.query.query_id] = sample_negatives(
                hp.negative_strategy, p, (), corpus,
                index=index, backend=backend, top_k_pool=hp.top_k_pool,
            )

    feat_cache: Dict[Tuple[str, str, str], SparseVec] = {}

    def cached_feats(example: RerankExample) -> SparseVec:
        key = (example.query.query_id, example.source_doc_id, example.section.section_id)
        if key not in feat_cache:
            feat_cache[key] = feats(example)
        return feat_cache[key]

    merged_cache: Dict[str, Section] = {}

    def merged(doc_id: str) -> Section:
        if doc_id not in merged_cache:
            merged_cache[doc_id] = _merged_section(corpus.get(doc_id))
        return merged_cache[doc_id]

    adam_w = _Adam(params.w.shape)
    adam_b = _Adam((1,))
    b_arr = np.array([params.b])

    if objective == "document_bce":
        dedupe = lambda p: p.source_doc_id
    elif objective == "contrastive" or hp.negative_strategy == "in_batch":
        dedupe = lambda p: (p.source_doc_id, p.section.section_id)
    else:
        dedupe = lambda p: id(p)

    def logit(vec: SparseVec) -> float:
        buckets, counts = vec
        return float(params.w[buckets] @ counts) + float(b_arr[0])

    for _ in range(hp.epochs):
        order = shuffle_rng.permutation(len(positives))
        shuffled = [positives[i] for i in order]
        epoch_losses = []
        for batch in _distinct_batches(shuffled, hp.B, key=dedupe):
            grad_w = np.zeros_like(params.w)
            grad_b = 0.0

            if objective == "contrastive":
                # In-batch softmax over pair logits; positives on the diagonal.
                if len(batch) == 1:
                    continue
                vecs = [
                    [
                        _as_sparse(
                            combine_blocks(
                                qblocks[pi.query.query_id],
                                sblock(pj.source_doc_id, pj.section),
                                hp.F,
                            ).entries
                        )
                        for pj in batch
                    ]
                    for pi in batch
                ]
                Bn = len(batch)
                Z = np.array([[logit(vecs[i][j]) for j in range(Bn)] for i in range(Bn)])
                m = Z.max(axis=1, keepdims=True)
                E = np.exp(Z - m)
                P = E / E.sum(axis=1, keepdims=True)
                loss = float(-(np.diag(Z) - m[:, 0] - np.log(E.sum(axis=1))).mean())
                G = (P - np.eye(Bn)) / Bn
                for i in range(Bn):
                    for j in range(Bn):
                        buckets, counts = vecs[i][j]
                        grad_w[buckets] += G[i, j] * counts
                        grad_b += G[i, j]
            else:
                groups = []
                for p in batch:
                    if objective == "document_bce":
                        own = RerankExample(p.query, merged(p.source_doc_id), 1, p.source_doc_id)
                        negs = [
                            RerankExample(p.query, merged(o.source_doc_id), 0, o.source_doc_id)
                            for o in batch
                            if o is not p
                        ]
                        examples = [own] + negs
                        vecs = [cached_feats(e) for e in examples]
                    else:
                        if hp.negative_strategy == "in_batch":
                            negs = sample_negatives("in_batch", p, batch, corpus)
                            vecs = [cached_feats(p)] + [feats(n) for n in negs]
                        else:
                            negs = static_negatives[p.query.query_id]
                            vecs = [cached_feats(p)] + [cached_feats(n) for n in negs]
                        examples = [p] + negs
                    labels = np.array([float(e.label) for e in examples])
                    groups.append((vecs, labels))

                clipped = []
                for vecs, _ in groups:
                    z = np.clip(np.array([logit(v) for v in vecs]), -60.0, 60.0)
                    clipped.append(np.clip(1.0 / (1.0 + np.exp(-z)), hp.bce_eps, 1.0 - hp.bce_eps))
                labels = [lab for _, lab in groups]
                loss, _ = bce_reranker_loss(clipped, labels)
                Bn = len(groups)
                for i, ((vecs, lab), scores) in enumerate(zip(groups, clipped)):
                    weight = 1.0 / (Bn * len(vecs))
                    # d(loss)/d(logit) for BCE-of-sigmoid collapses to (p - y).
                    dz = weight * (scores - lab)
                    for (buckets, counts), g in zip(vecs, dz):
                        grad_w[buckets] += g * counts
                        grad_b += g

            epoch_losses.append(loss)
            adam_w.step(params.w, grad_w, hp.lr)
            adam_b.step(b_arr, np.array([grad_b]), hp.lr)
        params.b = float(b_arr[0])
        if loss_log is not None:
            loss_log.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
    params.b = float(b_arr[0])
    return params


# -- checkpoints ---------------------------------------------------------------


def _read_exact(handle, n: int) -> bytes:
    data = handle.read(n)
    if len(data) != n:
        raise Truncated(f"expected {n} bytes, got {len(data)}")
    return data


def save_retriever_checkpoint(params: EncoderParams, path, step: int = 0) -> None:
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<IBII", CHECKPOINT_VERSION, _ROLE_RETRIEVER, params.d_emb, params.F))
        handle.write(params.W_Q.astype("<f4").tobytes())
        handle.write(params.W_S.astype("<f4").tobytes())
        handle.write(struct.pack("<QQ", params.seed, step))


def save_reranker_checkpoint(params: RerankerParams, path, step: int = 0) -> None:
    with open(path, "wb") as handle:
        handle.write(CHECKPOINT_MAGIC)
        handle.write(struct.pack("<IBI", CHECKPOINT_VERSION, _ROLE_RERANKER, params.F))
        handle.write(params.w.astype("<f4").tobytes())
        handle.write(struct.pack("<f", params.b))
        handle.write(struct.pack("<QQ", params.seed, step))


def _open_checkpoint(handle) -> int:
    magic = _read_exact(handle, 4)
    if magic != CHECKPOINT_MAGIC:
        raise BadMagic(magic.hex())
    (version,) = struct.unpack("<I", _read_exact(handle, 4))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"checkpoint version {version}")
    (role,) = struct.unpack("<B", _read_exact(handle, 1))
    return role


def load_retriever_checkpoint(path) -> Tuple[EncoderParams, int]:
    with open(path, "rb") as handle:
        if _open_checkpoint(handle) != _ROLE_RETRIEVER:
            raise DataError("expected a retriever checkpoint")
        d_emb, F = struct.unpack("<II", _read_exact(handle, 8))
        w_q = np.frombuffer(_read_exact(handle, 4 * d_emb * F), dtype="<f4").astype(np.float64)
        w_s = np.frombuffer(_read_exact(handle, 4 * d_emb * F), dtype="<f4").astype(np.float64)
        seed, step = struct.unpack("<QQ", _read_exact(handle, 16))
    params = EncoderParams(
        d_emb=d_emb, F=F, W_Q=w_q.reshape(d_emb, F), W_S=w_s.reshape(d_emb, F), seed=seed
    )
    return params, step


def load_reranker_checkpoint(path) -> Tuple[RerankerParams, int]:
    with open(path, "rb") as handle:
        if _open_checkpoint(handle) != _ROLE_RERANKER:
            raise DataError("expected a reranker checkpoint")
        (F,) = struct.unpack("<I", _read_exact(handle, 4))
        w = np.frombuffer(_read_exact(handle, 4 * 3 * F), dtype="<f4").astype(np.float64)
        (b,) = struct.unpack("<f", _read_exact(handle, 4))
        seed, step = struct.unpack("<QQ", _read_exact(handle, 16))
    return RerankerParams(F=F, w=w, b=float(b), seed=seed), step

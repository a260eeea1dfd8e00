"""Deterministic synthetic corpus generator for desk-scale experiments.

Each document is an entity with a unique answer token planted in exactly one
gold section.  The answer appears only in an image segment's alt text with
probability ``p_img``, only inside a table cell with probability ``p_tbl``,
and otherwise in the section's text.  Queries carry the answer token plus
context words drawn from the gold section, and queries about image-placed
answers are multimodal (their image reference repeats the answer in its alt
text, so the signal is only reachable through image content).

Train and eval queries target disjoint halves of the corpus, so evaluation
measures generalization through content visibility rather than memorized
query-document alignments.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .corpus import Corpus, Document, QRel, Query, Section, Segment

# Probability that a query mentions the document's entity token; kept low so
# title-only document views stay weak.
ENTITY_IN_QUERY = 0.1

# Probability that a non-gold section carries a decoy image, which can shadow
# the answer image in first-image document views.
DECOY_IMAGE_PROB = 0.3


@dataclass(frozen=True)
class SynthConfig:
    num_docs: int = 100
    sections_per_doc: int = 6
    vocab_size: int = 400
    queries_per_split: int = 50
    p_img: float = 0.0
    p_tbl: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.p_img + self.p_tbl > 1.0 + 1e-12:
            raise ValueError("p_img + p_tbl must not exceed 1")
        if min(self.num_docs, self.sections_per_doc, self.vocab_size, self.queries_per_split) < 1:
            raise ValueError("all counts must be >= 1")
        if min(self.p_img, self.p_tbl) < 0:
            raise ValueError("probabilities must be non-negative")


# How often the answer token repeats at its placement site; repetition keeps
# the unique signal above the 1/S dilution of the section mean.
ANSWER_REPEATS = 3


def _doc(cfg: SynthConfig, rng: np.random.Generator, i: int, filler_pool: List[str], glue_pool: List[str]):
    entity = f"entity{i:04d}"
    answer = f"answer{i:04d}"
    # Glue words recur in every section of the document; they make sibling
    # sections confusable without colliding with query context words, which
    # are always drawn from the filler pool.
    shared = [str(w) for w in rng.choice(glue_pool, size=2, replace=False)]
    gold = int(rng.integers(cfg.sections_per_doc))
    draw = rng.random()
    placement = "image" if draw < cfg.p_img else "table" if draw < cfg.p_img + cfg.p_tbl else "text"

    sections = []
    gold_fillers: List[str] = []
    for j in range(cfg.sections_per_doc):
        heading = "" if j == 0 else str(rng.choice(glue_pool))
        fillers = [str(w) for w in rng.choice(filler_pool, size=4, replace=False)]
        words = ([entity] if j == 0 else []) + shared + fillers
        if j == gold:
            gold_fillers = fillers
            if placement == "text":
                words.extend([answer] * ANSWER_REPEATS)
        segments = [Segment("text", " ".join(words))]
        if j == gold:
            if placement == "image":
                segments.append(
                    Segment("image", f"fig{i:04d}.jpg | {answer} photo {answer} closeup")
                )
            elif placement == "table":
                segments.append(
                    Segment(
                        "table",
                        f"<table><tr><th>field</th><th>value</th></tr>"
                        f"<tr><td>{fillers[0]}</td><td>{answer} {answer}</td></tr></table>",
                    )
                )
        elif rng.random() < DECOY_IMAGE_PROB:
            alt = " ".join(str(w) for w in rng.choice(filler_pool, size=2, replace=False))
            segments.append(Segment("image", f"dec{i:04d}_{j}.jpg | {alt}"))
        sections.append(Section(section_id=f"s{j}", heading=heading, segments=tuple(segments)))

    doc = Document(doc_id=f"doc{i:04d}", title=entity, sections=tuple(sections))
    return doc, entity, answer, gold, placement, gold_fillers


def gen_synthetic(cfg: SynthConfig) -> Tuple[Corpus, List[Query], List[QRel]]:
    """Corpus plus train and eval query splits with one qrel per query.

    Train queries target documents in the first half of the corpus and eval
    queries the second half (both halves when there is only one document).
    """
    rng = np.random.default_rng(cfg.seed)
    vocab = [f"w{i:04d}" for i in range(cfg.vocab_size)]
    cut = max(1, (3 * cfg.vocab_size) // 4)
    filler_pool, glue_pool = vocab[:cut], vocab[cut:] or vocab[:1]

    docs, entities, answers, golds, placements, fillers = [], [], [], [], [], []
    for i in range(cfg.num_docs):
        doc, entity, answer, gold, placement, gold_fillers = _doc(cfg, rng, i, filler_pool, glue_pool)
        docs.append(doc)
        entities.append(entity)
        answers.append(answer)
        golds.append(gold)
        placements.append(placement)
        fillers.append(gold_fillers)

    half = max(1, cfg.num_docs // 2)
    pools = {"train": list(range(half)), "eval": list(range(half, cfg.num_docs)) or [0]}

    queries: List[Query] = []
    qrels: List[QRel] = []
    for split in ("train", "eval"):
        pool = pools[split]
        for q in range(cfg.queries_per_split):
            i = pool[q % len(pool)]
            doc = docs[i]
            gold_section = doc.sections[golds[i]]
            context = [str(w) for w in rng.choice(fillers[i], size=2, replace=False)]
            words = [answers[i]] + context
            if rng.random() < ENTITY_IN_QUERY:
                words.append(entities[i])
            words.append(str(rng.choice(filler_pool)))
            order = rng.permutation(len(words))
            image_refs = ()
            if placements[i] == "image":
                image_refs = (f"q{split[0]}{q:04d}.jpg | {answers[i]} view",)
            query_id = f"{split}-q{q:04d}"
            queries.append(
                Query(query_id=query_id, text=" ".join(words[k] for k in order), image_refs=image_refs)
            )
            qrels.append(QRel(query_id=query_id, doc_id=doc.doc_id, section_id=gold_section.section_id))

    return Corpus(tuple(docs)), queries, qrels


def split_queries(queries: List[Query]) -> Tuple[List[Query], List[Query]]:
    """Separate the generator's train and eval halves by query id prefix."""
    train = [q for q in queries if q.query_id.startswith("train-")]
    eval_ = [q for q in queries if q.query_id.startswith("eval-")]
    return train, eval_

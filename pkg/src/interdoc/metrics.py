"""Retrieval metrics and evaluation reports."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Set


def recall_at_k(ranked_ids: Sequence, relevant: Set, k: int) -> int:
    """1 iff any relevant id appears within the first k results."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return int(any(r in relevant for r in ranked_ids[:k]))


def mrr_at_k(ranked_ids: Sequence, relevant: Set, k: int) -> float:
    """1/rank of the first relevant id when rank <= k, else 0."""
    if k < 1:
        raise ValueError("k must be >= 1")
    for rank, item in enumerate(ranked_ids[:k], start=1):
        if item in relevant:
            return 1.0 / rank
    return 0.0


@dataclass
class EvalReport:
    metrics: Dict[str, float]
    per_query: List[dict]
    config: dict
    seed: int

    def to_json(self) -> str:
        payload = {
            "config": self.config,
            "seed": self.seed,
            "metrics": self.metrics,
            "per_query": self.per_query,
        }
        return json.dumps(payload, ensure_ascii=False, sort_keys=True, indent=2)

    def to_text(self) -> str:
        width = max((len(name) for name in self.metrics), default=6)
        lines = [f"{name:<{width}}  {value:.4f}" for name, value in sorted(self.metrics.items())]
        return "\n".join(lines)


def build_report(
    rows: List[dict],
    ks: Sequence[int],
    config: dict,
    seed: int,
    mrr_k: int = 10,
) -> EvalReport:
    """Aggregate per-query rows into mean R@K and MRR@K metrics.

    Each row needs ``ranked`` (ordered ids) and ``relevant`` (a set); ids may
    be any hashable, e.g. doc_id strings or (doc_id, section_id) tuples.
    """
    if not rows:
        raise ValueError("no queries to evaluate")
    metrics: Dict[str, float] = {}
    for k in ks:
        metrics[f"R@{k}"] = float(
            sum(recall_at_k(r["ranked"], r["relevant"], k) for r in rows) / len(rows)
        )
    metrics[f"MRR@{mrr_k}"] = float(
        sum(mrr_at_k(r["ranked"], r["relevant"], mrr_k) for r in rows) / len(rows)
    )
    per_query = []
    for r in rows:
        per_query.append(
            {
                "query_id": r["query_id"],
                "hits": [list(h) if isinstance(h, tuple) else h for h in r["ranked"][:10]],
                "first_relevant_rank": next(
                    (i for i, h in enumerate(r["ranked"], start=1) if h in r["relevant"]), None
                ),
            }
        )
    return EvalReport(metrics=metrics, per_query=per_query, config=config, seed=seed)

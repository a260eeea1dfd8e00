"""HTTP client for an external encoder service.

The service exposes POST /v1/embed, POST /v1/score, and GET /v1/health.
Wire items carry text, base64 images, and table HTML; this client stores no
pixels, so image references travel as text (src and alt words) and tables
travel in the ``tables`` field.
"""
from __future__ import annotations

from typing import Iterable, List, Sequence, Union

import numpy as np
import requests

from .corpus import Query, Section
from .encoding import Embedding, EncoderBackend
from .errors import ProtocolError, ServiceError, Transport

# The service rejects batches above this size with 413.
MAX_BATCH = 64
DEFAULT_TIMEOUT = 30.0


def wire_item(obj: Union[Query, Section]) -> dict:
    """Convert a query or section into the service's item schema."""
    if isinstance(obj, Query):
        parts = [obj.text] + [ref for ref in obj.image_refs]
        return {"text": " ".join(p for p in parts if p).strip(), "images": [], "tables": []}
    parts = [obj.heading]
    tables = []
    for segment in obj.segments:
        if segment.kind == "table":
            tables.append(segment.content)
        else:
            parts.append(segment.content)
    return {"text": " ".join(p for p in parts if p).strip(), "images": [], "tables": tables}


def _post(endpoint: str, path: str, payload: dict, timeout: float) -> dict:
    try:
        response = requests.post(endpoint.rstrip("/") + path, json=payload, timeout=timeout)
    except requests.RequestException as exc:
        raise Transport(str(exc)) from exc
    if not 200 <= response.status_code < 300:
        raise ServiceError(response.status_code, response.text[:200])
    try:
        return response.json()
    except ValueError as exc:
        raise ProtocolError(f"non-JSON response: {exc}") from exc


def remote_embed(
    endpoint: str,
    role: str,
    items: Sequence[Union[Query, Section]],
    timeout: float = DEFAULT_TIMEOUT,
) -> List[Embedding]:
    """One embedding per item; single request (callers chunk large batches)."""
    if not items:
        raise ValueError("items must be non-empty")
    payload = {"role": role, "items": [wire_item(o) for o in items]}
    body = _post(endpoint, "/v1/embed", payload, timeout)
    try:
        dim = int(body["dim"])
        vectors = body["embeddings"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed embed response: {exc}") from exc
    if len(vectors) != len(items):
        raise ProtocolError(f"requested {len(items)} embeddings, got {len(vectors)}")
    embeddings = []
    for vec in vectors:
        if len(vec) != dim:
            raise ProtocolError(f"embedding length {len(vec)} != declared dim {dim}")
        embeddings.append(Embedding(role, np.asarray(vec, dtype=np.float64)))
    return embeddings


def remote_score(
    endpoint: str,
    query: Query,
    sections: Sequence[Section],
    timeout: float = DEFAULT_TIMEOUT,
) -> List[float]:
    if not sections:
        raise ValueError("sections must be non-empty")
    payload = {"query": wire_item(query), "sections": [wire_item(s) for s in sections]}
    body = _post(endpoint, "/v1/score", payload, timeout)
    try:
        scores = [float(s) for s in body["scores"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed score response: {exc}") from exc
    if len(scores) != len(sections):
        raise ProtocolError(f"requested {len(sections)} scores, got {len(scores)}")
    return scores


def health(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> dict:
    try:
        response = requests.get(endpoint.rstrip("/") + "/v1/health", timeout=timeout)
    except requests.RequestException as exc:
        raise Transport(str(exc)) from exc
    if response.status_code != 200:
        raise ServiceError(response.status_code, response.text[:200])
    return response.json()


class RemoteEncoderBackend(EncoderBackend):
    """Encoder backend served over HTTP; batches are chunked to the service cap."""

    def __init__(self, endpoint: str, timeout: float = DEFAULT_TIMEOUT):
        self.endpoint = endpoint
        self.timeout = timeout
        self._dim = int(health(endpoint, timeout)["dim"])

    def dim(self) -> int:
        return self._dim

    def _embed(self, role: str, items: Sequence) -> List[Embedding]:
        out: List[Embedding] = []
        for start in range(0, len(items), MAX_BATCH):
            chunk = items[start : start + MAX_BATCH]
            embeddings = remote_embed(self.endpoint, role, chunk, self.timeout)
            for e in embeddings:
                if e.dim != self._dim:
                    raise ProtocolError(f"service dim changed: {e.dim} != {self._dim}")
            out.extend(embeddings)
        return out

    def encode_query(self, query: Query) -> Embedding:
        return self._embed("query", [query])[0]

    def encode_sections(self, sections: Sequence[Section]) -> List[Embedding]:
        return self._embed("section", list(sections))


def conformance_check(endpoint: str, timeout: float = DEFAULT_TIMEOUT) -> List[dict]:
    """Probe the service contract; returns one row per check."""
    results: List[dict] = []

    def record(name: str, ok: bool, detail: str = ""):
        results.append({"check": name, "ok": bool(ok), "detail": detail})

    info = health(endpoint, timeout)
    declared = info.get("dim")
    record("health", info.get("status") == "ok", f"status={info.get('status')!r}")
    record("health_dim", isinstance(declared, int) and declared > 0, f"dim={declared!r}")

    probe = Query(query_id="probe", text="conformance probe")
    twin = Query(query_id="probe-twin", text="conformance probe")
    for role, items in (("query", [probe, twin]), ("section", [_probe_section()])):
        embeddings = remote_embed(endpoint, role, items, timeout)
        record(
            f"embed_{role}_count", len(embeddings) == len(items),
            f"{len(embeddings)} embeddings for {len(items)} items",
        )
        record(
            f"embed_{role}_dim",
            all(e.dim == declared for e in embeddings),
            f"lengths={[e.dim for e in embeddings]}",
        )
    pair = remote_embed(endpoint, "query", [probe, twin], timeout)
    identical = bool(np.array_equal(pair[0].values, pair[1].values))
    record("embed_deterministic", identical, "identical items must embed identically")

    scores = remote_score(endpoint, probe, [_probe_section(), _probe_section("other words")], timeout)
    record("score_count", len(scores) == 2, f"{len(scores)} scores for 2 sections")
    record("score_range", all(0.0 < s < 1.0 for s in scores), f"scores={scores}")
    return results


def _probe_section(text: str = "conformance probe body") -> Section:
    from .corpus import Segment

    return Section(section_id="probe", heading="probe", segments=(Segment("text", text),))

"""Two-stage retrieval: stock/date anchors first, then scoped entities, then the subgraph."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from datetime import date, timedelta

import numpy as np

from .errors import NotFoundError, StalenessError
from .graph import TimedTriple, item_to_json
from .graphstore import GraphStore
from .providers import Embedder
from .vectorstore import VectorIndex, VectorRecord, mips_search, relation_type

logger = logging.getLogger(__name__)

DEFAULT_K_COARSE = 3
DEFAULT_K_FINE = 20


@dataclass(frozen=True)
class Anchor:
    stock: str
    date: date | None
    score: float

    def to_json(self) -> dict:
        return {"stock": self.stock, "date": self.date.isoformat() if self.date else None, "score": self.score}


@dataclass(frozen=True)
class Subgraph:
    triples: tuple[tuple[str, TimedTriple], ...] = ()
    provenance: tuple[str, ...] = ()
    scores: tuple[float, ...] = field(default=(), compare=False)

    def __len__(self) -> int:
        return len(self.triples)

    def items(self) -> list[TimedTriple]:
        return [t for _, t in self.triples]

    def stocks(self) -> set[str]:
        return {s for s, _ in self.triples}

    def to_json(self, anchors: list[Anchor] | None = None) -> dict:
        out = {
            "triples": [dict(item_to_json(t), stock=s) for s, t in self.triples],
            "provenance": list(self.provenance),
            "scores": list(self.scores),
        }
        if anchors is not None:
            out["anchors"] = [a.to_json() for a in anchors]
        return out


def encode_query(q: str, embedder: Embedder) -> np.ndarray:
    if not q or not q.strip():
        raise ValueError("query must be non-empty")
    return embedder.embed([q])[0]


def is_coarse_candidate(rec: VectorRecord) -> bool:
    return rec.level == "graph" or rec.entity_kind == "stock"


def _visible(rec: VectorRecord, as_of: date | None) -> bool:
    return as_of is None or rec.date is None or rec.date <= as_of


def coarse_retrieve(h_q: np.ndarray, index: VectorIndex, k_c: int = DEFAULT_K_COARSE,
                    as_of: date | None = None) -> list[Anchor]:
    """Top ``k_c`` distinct (stock, date) anchors from graph and stock-entity records."""
    if k_c < 1:
        raise ValueError("k_c must be >= 1")
    candidates = VectorIndex(index.dimension,
                             tuple(r for r in index.records if is_coarse_candidate(r) and _visible(r, as_of)))
    if not candidates.records:
        return []
    anchors: dict[tuple[str, date | None], Anchor] = {}
    for rec, score in mips_search(candidates, h_q, len(candidates)):
        pair = (rec.stock, rec.date)
        if pair not in anchors:
            anchors[pair] = Anchor(rec.stock, rec.date, score)
            if len(anchors) == k_c:
                break
    return list(anchors.values())


def anchor_matches(anchor: Anchor, stock: str | None, when: date | None, window_days: int = 0) -> bool:
    if stock != anchor.stock:
        return False
    if anchor.date is None:
        return True
    return when is not None and abs((when - anchor.date).days) <= window_days


def fine_retrieve(h_q: np.ndarray, anchors: list[Anchor], index: VectorIndex, k_f: int = DEFAULT_K_FINE,
                  window_days: int = 0, as_of: date | None = None) -> list[tuple[VectorRecord, float]]:
    """Top ``k_f`` entity/relation records inside some anchor's scope, scored against the query."""
    if k_f < 1:
        raise ValueError("k_f must be >= 1")
    if not anchors:
        return []

    def in_scope(level: str, stock: str | None, when: date | None) -> bool:
        if level == "graph" or (as_of is not None and when is not None and when > as_of):
            return False
        return any(anchor_matches(a, stock, when, window_days) for a in anchors)

    return mips_search(index, h_q, k_f, filter=in_scope)


def map_to_subgraph(fine: list[tuple[VectorRecord, float]] | list[VectorRecord], store: GraphStore,
                    window_days: int = 0, as_of: date | None = None) -> Subgraph:
    """Union of the stored triples incident to each fine record within its stock and date window."""
    found: dict[tuple[str, tuple], tuple[str, TimedTriple]] = {}
    keys, scores = [], []
    for entry in fine:
        rec, score = entry if isinstance(entry, tuple) else (entry, float("nan"))
        if rec.stock is None or rec.date is None:
            continue
        start = rec.date - timedelta(days=window_days)
        end = rec.date + timedelta(days=window_days)
        if as_of is not None:
            end = min(end, as_of)
        try:
            g = store.graph(rec.stock)
        except NotFoundError:
            logger.warning("skipping %s: stock %s is not in the store", rec.key, rec.stock)
            continue
        if rec.level == "entity":
            hits = store.incident(rec.key, ticker=rec.stock, start=start, end=end)
        else:
            hits = [(g.ticker, t) for t in g.items()
                    if start <= t.timestamp <= end and relation_type(t).name == rec.key]
        if not hits:
            logger.warning("skipping %s: no stored triples (purged entity?)", rec.key)
            continue
        keys.append(rec.key)
        scores.append(score)
        for ticker, item in hits:
            found[(ticker, item.kind, item.sort_key())] = (ticker, item)
    ordered = tuple(found[k] for k in sorted(found, key=lambda k: (k[0], k[2])))
    return Subgraph(ordered, tuple(keys), tuple(scores))


def retrieve(q: str, index: VectorIndex, store: GraphStore, embedder: Embedder,
             k_c: int = DEFAULT_K_COARSE, k_f: int = DEFAULT_K_FINE, window_days: int = 0,
             as_of: date | None = None) -> tuple[Subgraph, list[Anchor]]:
    if index.build_id != (store.build_id or ""):
        raise StalenessError(f"index build {index.build_id!r} does not match store build {store.build_id!r}")
    h_q = encode_query(q, embedder)
    anchors = coarse_retrieve(h_q, index, k_c, as_of=as_of)
    fine = fine_retrieve(h_q, anchors, index, k_f, window_days=window_days, as_of=as_of)
    return map_to_subgraph(fine, store, window_days=window_days, as_of=as_of), anchors

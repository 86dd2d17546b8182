"""On-disk store for per-stock dual graphs.

Layout::

    <root>/meta.json            build id
    <root>/entities.jsonl       global entity registry
    <root>/stocks/<ticker>.jsonl  header line, then one line per triple
"""

from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable

from .errors import NotFoundError, PersistenceError
from .graph import Entity, Relation, StockGraph, TimedTriple, item_from_json, item_to_json, sort_items


@dataclass(frozen=True)
class GraphStats:
    entity_count: int
    relation_type_count: int
    triple_count: int

    def to_json(self) -> dict:
        return {"entity_count": self.entity_count, "relation_type_count": self.relation_type_count,
                "triple_count": self.triple_count}


def _atomic_write(path: Path, lines: Iterable[str]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line + "\n")
        os.replace(tmp, path)
    except OSError as exc:
        Path(tmp).unlink(missing_ok=True)
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def _dumps(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


class GraphStore:
    """JSON Lines graph store; writes are atomic per stock file."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._cache: dict[str, StockGraph] | None = None
        self._incidence: dict[str, list[tuple[str, TimedTriple]]] | None = None

    @property
    def stocks_dir(self) -> Path:
        return self.root / "stocks"

    def reset(self) -> None:
        """Remove every stored stock and the registry (used for full rebuilds)."""
        for name in ("stocks",):
            shutil.rmtree(self.root / name, ignore_errors=True)
        for name in ("entities.jsonl", "meta.json"):
            (self.root / name).unlink(missing_ok=True)
        self._cache = None
        self._incidence = None

    # --- build id -----------------------------------------------------------------

    @property
    def build_id(self) -> str | None:
        try:
            return json.loads((self.root / "meta.json").read_text(encoding="utf-8")).get("build_id")
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as exc:
            raise PersistenceError(f"cannot read store metadata: {exc}") from exc

    def set_build_id(self, build_id: str) -> None:
        _atomic_write(self.root / "meta.json", [_dumps({"build_id": build_id})])

    # --- reading ------------------------------------------------------------------

    def _read_stock(self, path: Path) -> StockGraph:
        try:
            with open(path, encoding="utf-8") as fh:
                rows = [json.loads(line) for line in fh if line.strip()]
        except (OSError, ValueError) as exc:
            raise PersistenceError(f"cannot read {path}: {exc}") from exc
        header, body = rows[0], rows[1:]
        items = [item_from_json(r) for r in body]
        return StockGraph(header["ticker"], header["label"],
                          frozenset(i for i in items if i.kind == "attribute"),
                          frozenset(i for i in items if i.kind == "event"))

    def _load(self) -> dict[str, StockGraph]:
        if self._cache is None:
            graphs = {}
            if self.stocks_dir.is_dir():
                for path in sorted(self.stocks_dir.glob("*.jsonl")):
                    g = self._read_stock(path)
                    graphs[g.ticker] = g
            self._cache = graphs
        return self._cache

    def tickers(self) -> list[str]:
        return sorted(self._load())

    def graph(self, ticker: str) -> StockGraph:
        try:
            return self._load()[ticker]
        except KeyError:
            raise NotFoundError(f"unknown stock {ticker!r}") from None

    def graphs(self) -> list[StockGraph]:
        store = self._load()
        return [store[t] for t in sorted(store)]

    # --- writing ------------------------------------------------------------------

    def upsert(self, graph: StockGraph) -> None:
        store = self._load()
        merged = store[graph.ticker].union(graph) if graph.ticker in store else graph
        header = {"kind": "stock", "ticker": merged.ticker, "label": merged.label}
        _atomic_write(self.stocks_dir / f"{merged.ticker}.jsonl",
                      [_dumps(header)] + [_dumps(item_to_json(i)) for i in merged.items()])
        store[merged.ticker] = merged
        self._incidence = None
        _atomic_write(self.root / "entities.jsonl",
                      [_dumps({"entity_id": e.entity_id, "label": e.label, "kind": e.kind})
                       for e in self.entities()])

    # --- queries ------------------------------------------------------------------

    def snapshot(self, ticker: str, start: date, end: date) -> StockGraph:
        if start > end:
            raise ValueError(f"date range is not ordered: {start} > {end}")
        return self.graph(ticker).between(start, end)

    def entities(self) -> list[Entity]:
        found: set[Entity] = set()
        for g in self._load().values():
            found.update(g.entities())
        return sorted(found)

    def entity(self, eid: str) -> Entity:
        for e in self.entities():
            if e.entity_id == eid:
                return e
        raise NotFoundError(f"unknown entity {eid!r}")

    def has_entity(self, eid: str) -> bool:
        return eid in self._incidence_index()

    def _incidence_index(self) -> dict[str, list[tuple[str, TimedTriple]]]:
        if self._incidence is None:
            index: dict[str, list[tuple[str, TimedTriple]]] = {}
            for g in self.graphs():
                for item in g.items():
                    head, tail = g.endpoints(item)
                    index.setdefault(head.entity_id, []).append((g.ticker, item))
                    if tail is not None and tail.entity_id != head.entity_id:
                        index.setdefault(tail.entity_id, []).append((g.ticker, item))
            self._incidence = index
        return self._incidence

    def incident(self, eid: str, ticker: str | None = None,
                 start: date | None = None, end: date | None = None) -> list[tuple[str, TimedTriple]]:
        """(ticker, item) pairs whose head or tail is ``eid``, optionally scoped."""
        return [(t, item) for t, item in self._incidence_index().get(eid, [])
                if (ticker is None or t == ticker)
                and (start is None or item.timestamp >= start)
                and (end is None or item.timestamp <= end)]

    def neighbors(self, eid: str) -> list[tuple[Relation, Entity, date]]:
        """Every triple incident to ``eid`` as (relation, other endpoint, timestamp)."""
        if not self.has_entity(eid):
            raise NotFoundError(f"unknown entity {eid!r}")
        rows = []
        graphs = {g.ticker: g for g in self.graphs()}
        for ticker, item in self.incident(eid):
            g = graphs[ticker]
            head, tail = g.endpoints(item)
            other = tail if head.entity_id == eid else head
            if other is None:
                continue
            rows.append((g.relation_of(item), other, item.timestamp))
        rows.sort(key=lambda r: (r[2], r[0].name, r[1].entity_id, r[0].category or ""))
        return rows

    def contains(self, ticker: str, item: TimedTriple) -> bool:
        g = self._load().get(ticker)
        if g is None:
            return False
        return item in (g.attribute_triples if item.kind == "attribute" else g.event_records)

    def stats(self) -> GraphStats:
        graphs = self.graphs()
        relation_types = set()
        for g in graphs:
            relation_types.update(g.relation_types())
        return GraphStats(len(self.entities()), len(relation_types), sum(len(g) for g in graphs))

"""Entity, relation, and graph-level vectors with exact inner-product search."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Literal, Sequence

import numpy as np

from .errors import EmptyGraphError, PersistenceError
from .graph import AttributeTriple, Entity, Relation, StockGraph, TimedTriple
from .providers import Embedder

Level = Literal["entity", "relation", "graph"]
FilterFn = Callable[[str, "str | None", "date | None"], bool]

NORM_TOL = 1e-9
QUERY_NORM_TOL = 1e-6

_MAGIC = b"FGVI"
_HEADER = struct.Struct("<4sIII64s")  # magic, version, dimension, count, build id


def _normalized(vec: np.ndarray) -> np.ndarray:
    vec = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("zero vector")
    return vec / norm


@dataclass(frozen=True, eq=False)
class VectorRecord:
    key: str
    level: Level
    vector: np.ndarray
    text: str
    stock: str | None = None
    date: date | None = None

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float64)
        if abs(float(np.linalg.norm(vec)) - 1.0) > NORM_TOL:
            raise ValueError(f"record {self.key!r} is not unit-norm")
        vec.setflags(write=False)
        object.__setattr__(self, "vector", vec)

    @property
    def identity(self) -> tuple[str, str | None, date | None]:
        return (self.key, self.stock, self.date)

    @property
    def entity_kind(self) -> str | None:
        if self.level != "entity":
            return None
        return self.key.rsplit("#", 1)[-1]

    def sort_key(self) -> tuple:
        return (self.key, self.stock or "", self.date.isoformat() if self.date else "")

    def meta(self) -> dict:
        return {"key": self.key, "level": self.level, "stock": self.stock,
                "date": self.date.isoformat() if self.date else None, "text": self.text}


def serialize_entity(entity: Entity, relations: Iterable[str], neighbors: Iterable[str]) -> str:
    parts = [entity.label, entity.kind, ", ".join(sorted(set(relations))), ", ".join(sorted(set(neighbors)))]
    return " ".join(" | ".join(parts).split())


def serialize_relation(relation: Relation) -> str:
    return " ".join(" | ".join([relation.name, relation.kind, relation.category or ""]).split())


def relation_type(item: TimedTriple) -> Relation:
    """The relation *type* an item instantiates: the attribute name, or the event category."""
    if isinstance(item, AttributeTriple):
        return Relation(item.relation, "attribute")
    return Relation(item.category, "event-trigger", item.category)


def entity_texts(g: StockGraph) -> dict[tuple[Entity, date], str]:
    """Serialization of each (entity, report date) neighborhood in ``g``."""
    rels: dict[tuple[Entity, date], set[str]] = {}
    nbrs: dict[tuple[Entity, date], set[str]] = {}
    for item in g.items():
        head, tail = g.endpoints(item)
        ends = [head] if tail is None else [head, tail]
        for e in ends:
            k = (e, item.timestamp)
            rels.setdefault(k, set()).add(item.relation)
            nbrs.setdefault(k, set())
        if tail is not None:
            nbrs[(head, item.timestamp)].add(tail.label)
            nbrs[(tail, item.timestamp)].add(head.label)
    return {k: serialize_entity(k[0], rels[k], nbrs[k]) for k in sorted(rels, key=lambda k: (k[0].entity_id, k[1]))}


def encode_graph(g: StockGraph, embedder: Embedder) -> list[VectorRecord]:
    """Entity records per (entity, report date), relation-type records per date, and one graph record."""
    if g.is_empty():
        raise EmptyGraphError(f"graph for {g.ticker} has no triples")
    ent = entity_texts(g)
    rel: dict[tuple[Relation, date], str] = {}
    for item in g.items():
        r = relation_type(item)
        rel[(r, item.timestamp)] = serialize_relation(r)
    rel_keys = sorted(rel, key=lambda k: (k[0].name, k[1]))

    ent_keys = list(ent)
    texts = [ent[k] for k in ent_keys] + [rel[k] for k in rel_keys]
    vectors = embedder.embed(texts)
    records = []
    for (e, d), vec in zip(ent_keys, vectors):
        records.append(VectorRecord(e.entity_id, "entity", _normalized(vec), ent[(e, d)], g.ticker, d))
    for (r, d), vec in zip(rel_keys, vectors[len(ent_keys):]):
        records.append(VectorRecord(r.name, "relation", _normalized(vec), rel[(r, d)], g.ticker, d))

    readout = _normalized(np.mean([r.vector for r in records if r.level == "entity"], axis=0))
    records.append(VectorRecord(f"graph:{g.ticker}", "graph", readout, "\n".join(ent.values()), g.ticker, None))
    return records


@dataclass(frozen=True)
class VectorIndex:
    dimension: int
    records: tuple[VectorRecord, ...] = ()
    build_id: str = ""
    _matrix: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for r in self.records:
            if r.vector.shape != (self.dimension,):
                raise ValueError(f"record {r.key!r} has dimension {r.vector.shape}, index has {self.dimension}")

    def __len__(self) -> int:
        return len(self.records)

    @property
    def matrix(self) -> np.ndarray:
        if self._matrix is None:
            m = np.stack([r.vector for r in self.records]) if self.records else np.zeros((0, self.dimension))
            m.setflags(write=False)
            object.__setattr__(self, "_matrix", m)
        return self._matrix


def ingest(index: VectorIndex, records: Iterable[VectorRecord]) -> VectorIndex:
    """New index with ``records`` added; an existing (key, stock, date) is replaced in place."""
    current = list(index.records)
    position = {r.identity: i for i, r in enumerate(current)}
    for r in records:
        if r.vector.shape != (index.dimension,):
            raise ValueError(f"record {r.key!r} has dimension {r.vector.shape[0]}, index has {index.dimension}")
        if r.identity in position:
            current[position[r.identity]] = r
        else:
            position[r.identity] = len(current)
            current.append(r)
    return VectorIndex(index.dimension, tuple(current), index.build_id)


def mips_search(index: VectorIndex, query: np.ndarray, k: int,
                filter: FilterFn | None = None) -> list[tuple[VectorRecord, float]]:
    """Exact top-k by inner product, ties broken by (key, stock, date) ascending."""
    if k < 1:
        raise ValueError("k must be >= 1")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dimension,):
        raise ValueError(f"query has shape {q.shape}, index dimension is {index.dimension}")
    if abs(float(np.linalg.norm(q)) - 1.0) > QUERY_NORM_TOL:
        raise ValueError("query vector must be unit-norm")
    if not index.records:
        return []

    if filter is None:
        idx = np.arange(len(index.records))
    else:
        idx = np.fromiter((i for i, r in enumerate(index.records) if filter(r.level, r.stock, r.date)), dtype=np.int64)
        if idx.size == 0:
            return []
    scores = index.matrix[idx] @ q
    if k < idx.size:
        threshold = np.partition(scores, idx.size - k)[idx.size - k]
        keep = scores >= threshold
        idx, scores = idx[keep], scores[keep]
    ranked = sorted(zip(idx.tolist(), scores.tolist()), key=lambda p: (-p[1], index.records[p[0]].sort_key()))
    return [(index.records[i], s) for i, s in ranked[:k]]


def save_index(index: VectorIndex, path: str | Path) -> None:
    """Binary header + little-endian float32 vectors, and a ``.meta.jsonl`` sidecar."""
    path = Path(path)
    bid = index.build_id.encode("ascii")
    if len(bid) > 64:
        raise ValueError("build id longer than 64 bytes")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(_MAGIC, 1, index.dimension, len(index.records), bid.ljust(64, b"\0")))
            fh.write(index.matrix.astype("<f4").tobytes())
        with open(sidecar_path(path), "w", encoding="utf-8") as fh:
            for r in index.records:
                fh.write(json.dumps(r.meta(), ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write index {path}: {exc}") from exc


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta.jsonl")


def load_index(path: str | Path) -> VectorIndex:
    path = Path(path)
    try:
        raw = path.read_bytes()
        metas = [json.loads(line) for line in sidecar_path(path).read_text(encoding="utf-8").splitlines() if line]
    except (OSError, ValueError) as exc:
        raise PersistenceError(f"cannot read index {path}: {exc}") from exc
    magic, version, dim, count, bid = _HEADER.unpack_from(raw)
    if magic != _MAGIC or version != 1:
        raise PersistenceError(f"{path} is not a vector index")
    if len(metas) != count or len(raw) != _HEADER.size + 4 * dim * count:
        raise PersistenceError(f"{path} is truncated or inconsistent with its sidecar")
    mat = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(count, dim).astype(np.float64)
    records = []
    for m, vec in zip(metas, mat):
        records.append(VectorRecord(m["key"], m["level"], _normalized(vec), m["text"], m["stock"],
                                    date.fromisoformat(m["date"]) if m["date"] else None))
    return VectorIndex(dim, tuple(records), bid.rstrip(b"\0").decode("ascii"))

"""Timestamped triples and the per-stock dual graph."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import date
from typing import Iterable, Literal, Union

EntityKind = Literal["stock", "institution", "industry", "exchange", "person", "product",
                     "value", "event-object", "other"]
ENTITY_KINDS: tuple[str, ...] = ("stock", "institution", "industry", "exchange", "person",
                                 "product", "value", "event-object", "other")

# Kind of the tail entity for each attribute relation; unlisted relations give "value".
TAIL_KINDS: dict[str, str] = {
    "Primary Exchange": "exchange",
    "Primary Industry": "industry",
    "Research Institution": "institution",
    "Key Products": "product",
    "Major Shareholders": "other",
}


def entity_id(label: str, kind: str) -> str:
    return f"{label.lower()}#{kind}"


@dataclass(frozen=True, order=True)
class Entity:
    entity_id: str
    label: str
    kind: str

    @classmethod
    def of(cls, label: str, kind: str) -> "Entity":
        if not label:
            raise ValueError("entity label must be non-empty")
        if kind not in ENTITY_KINDS:
            raise ValueError(f"unknown entity kind {kind!r}")
        return cls(entity_id(label, kind), label, kind)


@dataclass(frozen=True)
class Relation:
    name: str
    kind: Literal["attribute", "event-trigger"]
    category: str | None = None

    def __post_init__(self) -> None:
        if self.kind == "attribute" and self.category is not None:
            raise ValueError("attribute relations carry no category")
        if self.kind == "event-trigger" and not self.category:
            raise ValueError("event-trigger relations need a category")


@dataclass(frozen=True)
class AttributeTriple:
    """(head, relation, tail, timestamp). Provenance is not part of identity."""

    head: str
    relation: str
    tail: str
    timestamp: date
    doc_id: str = field(default="", compare=False)

    kind = "attribute"

    def __post_init__(self) -> None:
        if not self.head:
            raise ValueError("head must be non-empty")

    @property
    def category(self) -> None:
        return None

    def sort_key(self) -> tuple:
        return (self.timestamp, 0, self.relation, self.head, self.tail, "")

    def with_tail(self, tail: str) -> "AttributeTriple":
        return replace(self, tail=tail)


@dataclass(frozen=True)
class EventRecord:
    """(subject, trigger, object, timestamp) tagged with a driven category."""

    subject: str
    trigger: str
    object: str
    category: str
    timestamp: date
    timeframe: str = field(default="", compare=False)
    reasoning: str = field(default="", compare=False)
    doc_id: str = field(default="", compare=False)

    kind = "event"

    def __post_init__(self) -> None:
        if not self.subject:
            raise ValueError("subject must be non-empty")
        if not self.trigger:
            raise ValueError("trigger must be non-empty")
        if not self.category:
            raise ValueError("category must be non-empty")

    @property
    def head(self) -> str:
        return self.subject

    @property
    def relation(self) -> str:
        return self.trigger

    @property
    def tail(self) -> str:
        return self.object

    def sort_key(self) -> tuple:
        return (self.timestamp, 1, self.trigger, self.subject, self.object, self.category)

    def with_tail(self, tail: str) -> "EventRecord":
        return replace(self, object=tail)


TimedTriple = Union[AttributeTriple, EventRecord]


def sort_items(items: Iterable[TimedTriple]) -> list[TimedTriple]:
    return sorted(items, key=lambda t: t.sort_key())


@dataclass(frozen=True)
class StockGraph:
    """Union of a stock's attribute triples and event records over all report dates."""

    ticker: str
    label: str
    attribute_triples: frozenset[AttributeTriple] = frozenset()
    event_records: frozenset[EventRecord] = frozenset()

    def __post_init__(self) -> None:
        object.__setattr__(self, "attribute_triples", frozenset(self.attribute_triples))
        object.__setattr__(self, "event_records", frozenset(self.event_records))

    @property
    def stock(self) -> Entity:
        return Entity.of(self.label, "stock")

    def items(self) -> list[TimedTriple]:
        return sort_items([*self.attribute_triples, *self.event_records])

    def __len__(self) -> int:
        return len(self.attribute_triples) + len(self.event_records)

    def is_empty(self) -> bool:
        return not self.attribute_triples and not self.event_records

    def dates(self) -> list[date]:
        return sorted({t.timestamp for t in self.items()})

    def endpoints(self, item: TimedTriple) -> tuple[Entity, Entity | None]:
        """Head and tail entities of ``item``; the tail is None when empty."""
        if isinstance(item, AttributeTriple):
            head = Entity.of(item.head, "stock" if item.head == self.label else "other")
            tail_kind = TAIL_KINDS.get(item.relation, "value")
        else:
            head = Entity.of(item.subject, "stock" if item.subject == self.label else "other")
            tail_kind = "stock" if item.object == self.label else "event-object"
        tail = Entity.of(item.tail, tail_kind) if item.tail else None
        return head, tail

    def relation_of(self, item: TimedTriple) -> Relation:
        if isinstance(item, AttributeTriple):
            return Relation(item.relation, "attribute")
        return Relation(item.trigger, "event-trigger", item.category)

    def entities(self) -> list[Entity]:
        found: set[Entity] = set()
        for item in self.items():
            head, tail = self.endpoints(item)
            found.add(head)
            if tail is not None:
                found.add(tail)
        return sorted(found)

    def relation_types(self) -> list[str]:
        """Attribute relation names plus event categories (one type per category)."""
        return sorted({t.relation for t in self.attribute_triples} | {e.category for e in self.event_records})

    def between(self, start: date, end: date) -> "StockGraph":
        return StockGraph(
            self.ticker,
            self.label,
            frozenset(t for t in self.attribute_triples if start <= t.timestamp <= end),
            frozenset(e for e in self.event_records if start <= e.timestamp <= end),
        )

    def union(self, other: "StockGraph") -> "StockGraph":
        return StockGraph(self.ticker, self.label,
                          self.attribute_triples | other.attribute_triples,
                          self.event_records | other.event_records)


def item_to_json(item: TimedTriple) -> dict:
    if isinstance(item, AttributeTriple):
        return {"kind": "attribute", "head": item.head, "relation": item.relation, "tail": item.tail,
                "category": None, "timeframe": None, "reasoning": None,
                "timestamp": item.timestamp.isoformat(), "doc_id": item.doc_id}
    return {"kind": "event", "head": item.subject, "relation": item.trigger, "tail": item.object,
            "category": item.category, "timeframe": item.timeframe or None, "reasoning": item.reasoning or None,
            "timestamp": item.timestamp.isoformat(), "doc_id": item.doc_id}


def item_from_json(obj: dict) -> TimedTriple:
    ts = date.fromisoformat(obj["timestamp"])
    if obj["kind"] == "attribute":
        return AttributeTriple(obj["head"], obj["relation"], obj.get("tail") or "", ts, obj.get("doc_id") or "")
    if obj["kind"] == "event":
        return EventRecord(obj["head"], obj["relation"], obj.get("tail") or "", obj["category"], ts,
                           timeframe=obj.get("timeframe") or "", reasoning=obj.get("reasoning") or "",
                           doc_id=obj.get("doc_id") or "")
    raise ValueError(f"unknown item kind {obj['kind']!r}")

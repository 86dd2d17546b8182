"""Turn a retrieved subgraph into a Rise/Fall signal."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Iterable, Literal, Protocol

from .errors import PersistenceError, SignalParseError
from .graph import EventRecord, TimedTriple
from .providers import ChatProvider, ChatRequest
from .retrieval import Subgraph

logger = logging.getLogger(__name__)

LABELS = ("Rise", "Fall")
DEFAULT_POSITIVE_CATEGORIES = frozenset({"Demand", "Revenue", "Technology Innovation"})


@dataclass(frozen=True)
class Signal:
    stock: str
    signal_date: date
    label: Literal["Rise", "Fall"]
    confidence: float
    rationale: str = ""
    source: str = ""

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"label must be Rise or Fall, got {self.label!r}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")

    def to_json(self) -> dict:
        return {"stock": self.stock, "signal_date": self.signal_date.isoformat(), "label": self.label,
                "confidence": self.confidence, "rationale": self.rationale, "source": self.source}

    @classmethod
    def from_json(cls, obj: dict) -> "Signal":
        return cls(obj["stock"], date.fromisoformat(obj["signal_date"]), obj["label"],
                   float(obj["confidence"]), obj.get("rationale", ""), obj.get("source", ""))


@dataclass(frozen=True)
class AnalystReply:
    raw_text: str
    parsed: tuple[str, float, str] | None = None


def _line(item: TimedTriple) -> str:
    notes = [n for n in (item.category, getattr(item, "timeframe", ""), item.timestamp.isoformat()) if n]
    return f"{item.head} -[{item.relation}]-> {item.tail} ({', '.join(notes)})"


def serialize_subgraph(g_sub: Subgraph | Iterable[TimedTriple]) -> str:
    """One line per triple, sorted by (timestamp, relation, head); event reasoning as an indented note."""
    items = g_sub.items() if isinstance(g_sub, Subgraph) else list(g_sub)
    lines = []
    for item in sorted(items, key=lambda t: (t.timestamp, t.relation, t.head, t.tail, t.category or "")):
        lines.append(_line(item))
        if isinstance(item, EventRecord) and item.reasoning:
            lines.append(f"    note: {item.reasoning}")
    return "\n".join(lines)


ANALYST_SYSTEM = "You are an equity analyst. Ground every statement in the knowledge graph facts you are given."

ANALYST_PROMPT = """Question: {query}
Stock: {stock}
As of: {date}

Knowledge graph facts:
{facts}

Predict whether the stock price will rise or fall over the next trading week.
Reply with one JSON object: {{"label": "Rise" or "Fall", "confidence": number between 0 and 1, "rationale": string}}"""

REASK_SUFFIX = """

Your previous reply could not be parsed. Reply with the JSON object only, with "label" exactly "Rise" or "Fall"."""


def parse_analyst_reply(raw: str) -> AnalystReply:
    text = raw.strip()
    if text.startswith("```"):
        text = text.strip("`").split("\n", 1)[-1].strip()
    start, end = text.find("{"), text.rfind("}")
    try:
        obj = json.loads(text[start:end + 1]) if start >= 0 else None
    except json.JSONDecodeError:
        obj = None
    if not isinstance(obj, dict) or obj.get("label") not in LABELS:
        return AnalystReply(raw)
    try:
        conf = float(obj.get("confidence"))
    except (TypeError, ValueError):
        return AnalystReply(raw)
    if math.isnan(conf):
        return AnalystReply(raw)
    rationale = obj.get("rationale", "")
    return AnalystReply(raw, (obj["label"], conf, rationale if isinstance(rationale, str) else str(rationale)))


def generate_signal(q: str, g_sub: Subgraph, chat: ChatProvider, stock: str, when: date,
                    source: str = "chat") -> Signal:
    prompt = ANALYST_PROMPT.format(query=q, stock=stock, date=when.isoformat(),
                                   facts=serialize_subgraph(g_sub) or "(none)")
    reply = parse_analyst_reply(chat.complete(ChatRequest(prompt, system_text=ANALYST_SYSTEM)))
    if reply.parsed is None:
        logger.warning("unparseable analyst reply for %s %s, asking again", stock, when)
        reply = parse_analyst_reply(chat.complete(ChatRequest(prompt + REASK_SUFFIX, system_text=ANALYST_SYSTEM)))
    if reply.parsed is None:
        raise SignalParseError(f"no parseable signal for {stock} on {when}", raw=reply.raw_text)
    label, conf, rationale = reply.parsed
    if not 0.0 <= conf <= 1.0:
        logger.warning("confidence %s for %s %s clamped to [0, 1]", conf, stock, when)
        conf = min(1.0, max(0.0, conf))
    return Signal(stock, when, label, conf, rationale, source)


def mock_analyst(g_sub: Subgraph, stock: str, when: date,
                 positive: Iterable[str] = DEFAULT_POSITIVE_CATEGORIES) -> Signal:
    """Rise iff the subgraph holds an event in a positive category; 0.1 confidence per such event above 0.5."""
    positive = frozenset(positive)
    hits = [t for t in g_sub.items() if isinstance(t, EventRecord) and t.category in positive]
    label = "Rise" if hits else "Fall"
    confidence = min(1.0, 0.5 + 0.1 * len(hits))
    rationale = "; ".join(_line(t) for t in hits) or "no positive-category events in the retrieved subgraph"
    return Signal(stock, when, label, confidence, rationale, "mock")


class Analyst(Protocol):
    def __call__(self, q: str, g_sub: Subgraph, stock: str, when: date) -> Signal: ...


class MockAnalyst:
    def __init__(self, positive: Iterable[str] = DEFAULT_POSITIVE_CATEGORIES):
        self.positive = frozenset(positive)

    def __call__(self, q: str, g_sub: Subgraph, stock: str, when: date) -> Signal:
        return mock_analyst(g_sub, stock, when, self.positive)


class ChatAnalyst:
    def __init__(self, chat: ChatProvider, source: str = "chat"):
        self.chat = chat
        self.source = source

    def __call__(self, q: str, g_sub: Subgraph, stock: str, when: date) -> Signal:
        return generate_signal(q, g_sub, self.chat, stock, when, self.source)


def write_signals(signals: Iterable[Signal], path: str | Path) -> None:
    ordered = sorted(signals, key=lambda s: (s.stock, s.signal_date))
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for s in ordered:
                fh.write(json.dumps(s.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def read_signals(path: str | Path) -> list[Signal]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [Signal.from_json(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc

"""Schema-guided knowledge population.

Each refined report yields attribute triples under the attribute schema and
event records under the event schema, all stamped with the report's publish
date. Two extractors are provided: a deterministic line-pattern extractor and
a chat-backed one that asks for a JSON object per document.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Callable, Iterable, Protocol

from .corpus import RefinedDoc
from .errors import ExtractionParseError, MixedStockError, PersistenceError
from .graph import AttributeTriple, EventRecord, StockGraph, item_from_json, item_to_json
from .providers import ChatProvider, ChatRequest
from .schema import AttributeSchema, EventSchema

logger = logging.getLogger(__name__)

# Corporate suffixes ignored when checking that a batch belongs to a stock.
DEFAULT_SUFFIXES = ("Co., Ltd.", "Co.,Ltd.", "Ltd.", "Inc.", "Corp.", "Corporation", "Limited",
                    "股份有限公司", "有限公司")


def stock_key(label: str, suffixes: Iterable[str] = DEFAULT_SUFFIXES) -> str:
    """Loose identity key for a company label: casefolded, corporate suffix removed."""
    text = " ".join(label.split())
    folded = text.casefold()
    for suffix in sorted(suffixes, key=len, reverse=True):
        s = suffix.casefold()
        if folded.endswith(s) and len(folded) > len(s):
            folded = folded[: -len(s)].rstrip(" ,")
            break
    return folded


@dataclass
class ExtractionBatch:
    doc_id: str
    ticker: str
    stock: str
    attribute_triples: list[AttributeTriple] = field(default_factory=list)
    event_records: list[EventRecord] = field(default_factory=list)
    extractor_id: str = ""
    warnings: int = 0

    def items(self) -> list:
        return [*self.attribute_triples, *self.event_records]


class Extractor(Protocol):
    extractor_id: str

    def extract(self, doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema) -> ExtractionBatch: ...


def doc_company(doc: RefinedDoc) -> str:
    return doc.company or doc.ticker or doc.doc_id


def _batch(doc: RefinedDoc, extractor_id: str) -> ExtractionBatch:
    return ExtractionBatch(doc_id=doc.doc_id, ticker=doc.ticker or doc.doc_id, stock=doc_company(doc),
                           extractor_id=extractor_id)


def _collect_attributes(batch: ExtractionBatch, pairs: Iterable[tuple[str, str]], s_a: AttributeSchema,
                        head: str, ts: date) -> None:
    latest: dict[str, str] = {}
    for relation, value in pairs:
        if relation not in s_a:
            logger.warning("%s: dropping relation outside schema: %r", batch.doc_id, relation)
            batch.warnings += 1
            continue
        latest[relation] = value
    batch.attribute_triples = [AttributeTriple(head, r, v, ts, batch.doc_id) for r, v in latest.items()]


_EVENT_LINE = re.compile(
    r"^\s*(?:[-*]\s*)?EVENT\[(?P<cat>[^\]]+)\]\s*(?P<subj>.+?)\s*->\s*(?P<trig>.+?)\s*->\s*(?P<obj>.*?)"
    r"\s*(?:::\s*(?P<why>.*?))?\s*$"
)


class RuleExtractor:
    """Line-pattern extractor.

    Attributes come from ``<Relation>: <value>`` lines; events from
    ``EVENT[<category>] <subject> -> <trigger> -> <object> :: <reasoning>``.
    """

    extractor_id = "rule"

    def extract(self, doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema) -> ExtractionBatch:
        batch = _batch(doc, self.extractor_id)
        ts = doc.publish_date
        attr_re = re.compile(
            r"^\s*(?:[-*]\s*)?(?:\*\*)?(" + "|".join(re.escape(r) for r in s_a.relation_names)
            + r")(?:\*\*)?\s*[:：]\s*(.*?)\s*$"
        )
        pairs = []
        for line in doc.body_text.splitlines():
            m = attr_re.match(line)
            if m:
                pairs.append((m.group(1), m.group(2)))
                continue
            m = _EVENT_LINE.match(line)
            if not m:
                continue
            category = m.group("cat").strip()
            if category not in s_e:
                logger.warning("%s: dropping event with unknown category %r", doc.doc_id, category)
                batch.warnings += 1
                continue
            batch.event_records.append(EventRecord(
                subject=m.group("subj"), trigger=m.group("trig"), object=m.group("obj"),
                category=category, timestamp=ts, reasoning=m.group("why") or "", doc_id=doc.doc_id,
            ))
        _collect_attributes(batch, pairs, s_a, batch.stock, ts)
        return batch


EXTRACTION_PROMPT = """Extract structured knowledge from the equity research report below.

Report date: {date}
Company: {company}

Attribute relations (use exactly these names): {attributes}
Event driven categories (choose one per event): {categories}

For each event, identify the subject and the object, the trigger relation, relevant entities such as
company names, products and indicators, the timeframe, the driven category, and a short reasoning
statement linking the event to the company's financial metrics. Only keep events tied to company activity.

Reply with one JSON object:
{{"attributes": {{"<relation>": "<value>", ...}},
 "events": [{{"subject": "...", "trigger": "...", "object": "...", "category": "...",
             "timeframe": "...", "reasoning": "..."}}]}}

Report:
{body}"""

_FENCE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```\s*$", re.DOTALL)


def parse_json_reply(reply: str):
    text = reply.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    return json.loads(text)


class ChatExtractor:
    """Chat-backed extractor; malformed events are skipped one by one."""

    extractor_id = "chat"

    def __init__(self, chat: ChatProvider, max_body_chars: int = 12000):
        self.chat = chat
        self.max_body_chars = max_body_chars

    def prompt(self, doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema) -> str:
        return EXTRACTION_PROMPT.format(
            date=doc.publish_date.isoformat(), company=doc_company(doc),
            attributes=", ".join(s_a.relation_names), categories=", ".join(s_e.category_names),
            body=doc.body_text[: self.max_body_chars],
        )

    def extract(self, doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema) -> ExtractionBatch:
        reply = self.chat.complete(ChatRequest(self.prompt(doc, s_a, s_e),
                                               system_text="You are a meticulous financial analyst."))
        try:
            payload = parse_json_reply(reply)
        except json.JSONDecodeError as exc:
            raise ExtractionParseError(f"{doc.doc_id}: reply is not JSON: {exc}", raw=reply) from exc
        if not isinstance(payload, dict):
            raise ExtractionParseError(f"{doc.doc_id}: reply is not a JSON object", raw=reply)

        batch = _batch(doc, self.extractor_id)
        ts = doc.publish_date
        attrs = payload.get("attributes") or {}
        if isinstance(attrs, dict):
            pairs = [(str(k), "" if v is None else str(v)) for k, v in attrs.items()]
        elif isinstance(attrs, list):
            pairs = [(str(a.get("relation", "")), str(a.get("value", a.get("tail", "")) or ""))
                     for a in attrs if isinstance(a, dict)]
        else:
            raise ExtractionParseError(f"{doc.doc_id}: 'attributes' has the wrong shape", raw=reply)
        _collect_attributes(batch, pairs, s_a, batch.stock, ts)

        for ev in payload.get("events") or []:
            if not isinstance(ev, dict):
                batch.warnings += 1
                continue
            category = str(ev.get("category") or "").strip()
            subject = str(ev.get("subject") or "").strip()
            trigger = str(ev.get("trigger") or ev.get("relation") or ev.get("subtype") or "").strip()
            if category not in s_e or not subject or not trigger:
                logger.warning("%s: skipping malformed event %r", doc.doc_id, ev)
                batch.warnings += 1
                continue
            batch.event_records.append(EventRecord(
                subject=subject, trigger=trigger, object=str(ev.get("object") or "").strip(),
                category=category, timestamp=ts, timeframe=str(ev.get("timeframe") or ""),
                reasoning=str(ev.get("reasoning") or ""), doc_id=doc.doc_id,
            ))
        return batch


def rule_extract(doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema) -> ExtractionBatch:
    return extract_document(doc, s_a, s_e, RuleExtractor())


def extract_document(doc: RefinedDoc, s_a: AttributeSchema, s_e: EventSchema,
                     extractor: Extractor) -> ExtractionBatch:
    if doc.publish_date is None:
        raise ValueError(f"{doc.doc_id}: publish_date is required for extraction")
    batch = extractor.extract(doc, s_a, s_e)
    # Schema guard applies to every extractor, including third-party ones.
    kept_attrs = [t for t in batch.attribute_triples if t.relation in s_a]
    kept_events = [e for e in batch.event_records if e.category in s_e]
    batch.warnings += len(batch.attribute_triples) - len(kept_attrs) + len(batch.event_records) - len(kept_events)
    batch.attribute_triples = kept_attrs
    batch.event_records = kept_events
    return batch


def build_stock_graph(batches: Iterable[ExtractionBatch], stock: str, ticker: str | None = None,
                      key: Callable[[str], str] = stock_key) -> StockGraph:
    """Union the batches of one stock; duplicate items collapse (set semantics)."""
    batches = sorted(batches, key=lambda b: b.doc_id)
    target = key(stock)
    attrs: set[AttributeTriple] = set()
    events: set[EventRecord] = set()
    for b in batches:
        if key(b.stock) != target or any(key(t.head) != target for t in b.attribute_triples):
            raise MixedStockError(f"batch {b.doc_id} is about {b.stock!r}, not {stock!r}")
        if ticker is not None and b.ticker != ticker:
            raise MixedStockError(f"batch {b.doc_id} has ticker {b.ticker!r}, not {ticker!r}")
        # First writer (lowest doc_id) keeps provenance for duplicates.
        for t in b.attribute_triples:
            if t not in attrs:
                attrs.add(t)
        for e in b.event_records:
            if e not in events:
                events.add(e)
    return StockGraph(ticker or (batches[0].ticker if batches else stock), stock,
                      frozenset(attrs), frozenset(events))


def write_batches(batches: Iterable[ExtractionBatch], path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for b in sorted(batches, key=lambda b: b.doc_id):
                for item in b.items():
                    row = item_to_json(item)
                    row.update(ticker=b.ticker, stock=b.stock, extractor_id=b.extractor_id)
                    fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def read_batches(path: str | Path) -> list[ExtractionBatch]:
    by_doc: dict[str, ExtractionBatch] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            item = item_from_json(row)
            b = by_doc.setdefault(row["doc_id"], ExtractionBatch(row["doc_id"], row["ticker"], row["stock"],
                                                                 extractor_id=row.get("extractor_id", "")))
            (b.attribute_triples if row["kind"] == "attribute" else b.event_records).append(item)
    return [by_doc[k] for k in sorted(by_doc)]

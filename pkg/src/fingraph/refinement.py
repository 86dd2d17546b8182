"""Quality-control refinement of a stock graph.

Three steps run in order: entity normalization against an alias table,
completion of numeric attributes from a reference source, and correction of
placeholder tails by re-asking the chat provider with the source passage.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

from .corpus import RefinedDoc
from .errors import NotFoundError, ProviderError
from .graph import AttributeTriple, EventRecord, StockGraph, TimedTriple, item_to_json, sort_items
from .providers import ChatProvider, ChatRequest, ReferenceLookup, ReferenceSource

logger = logging.getLogger(__name__)

NUMERIC_RELATIONS: frozenset[str] = frozenset({"Current Stock Price", "Market Capitalization", "Target Price"})
UNIT_LEXICON: frozenset[str] = frozenset({"CNY", "USD", "HKD", "%", "billions", "millions", "亿", "万"})
PLACEHOLDERS: tuple[str, ...] = ("No relevant information was found", "Extraction error")
DEFAULT_PASSAGE_CHARS = 4000

_UNIT_TOKENS = re.compile(r"[A-Za-z]+|%|亿|万")


def has_unit(text: str, lexicon: Iterable[str] = UNIT_LEXICON) -> bool:
    folded = {u.casefold() for u in lexicon}
    return any(tok.casefold() in folded for tok in _UNIT_TOKENS.findall(text))


@dataclass
class AliasTable:
    canonical: dict[str, set[str]] = field(default_factory=dict)
    suffixes: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.canonical = {c: set(a) for c, a in self.canonical.items()}
        owner: dict[str, str] = {}
        canon_keys = {c.casefold() for c in self.canonical}
        for canon, aliases in self.canonical.items():
            for alias in aliases:
                k = alias.casefold()
                if k in canon_keys and k != canon.casefold():
                    raise ValueError(f"alias {alias!r} is itself a canonical label")
                if k in owner and owner[k] != canon:
                    raise ValueError(f"alias {alias!r} maps to both {owner[k]!r} and {canon!r}")
                owner[k] = canon
        self._alias_owner = owner
        self._canon = {c.casefold(): c for c in self.canonical}

    @classmethod
    def from_json(cls, obj: Mapping) -> "AliasTable":
        return cls({k: set(v) for k, v in obj.get("canonical", {}).items()}, list(obj.get("suffixes", [])))

    @classmethod
    def load(cls, path: str | Path) -> "AliasTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))

    def _lookup(self, label: str) -> str | None:
        k = " ".join(label.split()).casefold()
        return self._canon.get(k) or self._alias_owner.get(k)

    def _strip_suffix(self, label: str) -> str | None:
        text = " ".join(label.split())
        for suffix in sorted(self.suffixes, key=len, reverse=True):
            if text.casefold().endswith(suffix.casefold()) and len(text) > len(suffix):
                return text[: -len(suffix)].rstrip(" ,")
        return None

    def canonicalize(self, label: str) -> str:
        """Canonical form of ``label``, or ``label`` itself when no table entry applies."""
        hit = self._lookup(label)
        if hit is None:
            stripped = self._strip_suffix(label)
            if stripped:
                hit = self._lookup(stripped)
        return hit if hit is not None else label


@dataclass
class RefinementReport:
    normalized_count: int = 0
    completed_count: int = 0
    corrected_count: int = 0
    unresolved: list[tuple[TimedTriple, str]] = field(default_factory=list)

    def __add__(self, other: "RefinementReport") -> "RefinementReport":
        return RefinementReport(
            self.normalized_count + other.normalized_count,
            self.completed_count + other.completed_count,
            self.corrected_count + other.corrected_count,
            self.unresolved + other.unresolved,
        )

    @property
    def counts(self) -> tuple[int, int, int]:
        return (self.normalized_count, self.completed_count, self.corrected_count)

    def to_json(self) -> dict:
        return {
            "normalized_count": self.normalized_count,
            "completed_count": self.completed_count,
            "corrected_count": self.corrected_count,
            "unresolved": [{"item": item_to_json(t), "reason": r} for t, r in self.unresolved],
        }


def _normalize(g: StockGraph, aliases: AliasTable) -> tuple[StockGraph, int]:
    changed = 0
    attrs, events = set(), set()
    for t in g.attribute_triples:
        new = AttributeTriple(aliases.canonicalize(t.head), t.relation, aliases.canonicalize(t.tail) if t.tail else t.tail,
                              t.timestamp, t.doc_id)
        changed += (new.head, new.tail) != (t.head, t.tail)
        attrs.add(new)
    for e in g.event_records:
        subj = aliases.canonicalize(e.subject)
        obj = aliases.canonicalize(e.object) if e.object else e.object
        changed += (subj, obj) != (e.subject, e.object)
        events.add(EventRecord(subj, e.trigger, obj, e.category, e.timestamp, e.timeframe, e.reasoning, e.doc_id))
    return StockGraph(g.ticker, aliases.canonicalize(g.label), frozenset(attrs), frozenset(events)), changed


def normalize_entities(g: StockGraph, aliases: AliasTable) -> StockGraph:
    """Rewrite alias labels to canonical ones; duplicates created by rewriting collapse."""
    return _normalize(g, aliases)[0]


def complete_attributes(g: StockGraph, refdata: ReferenceSource,
                        numeric: Iterable[str] = NUMERIC_RELATIONS,
                        units: Iterable[str] = UNIT_LEXICON) -> tuple[StockGraph, RefinementReport]:
    numeric = frozenset(numeric)
    units = frozenset(units)
    report = RefinementReport()
    attrs = set()
    for t in sort_items(g.attribute_triples):
        if t.relation in numeric and (not t.tail.strip() or not has_unit(t.tail, units)):
            try:
                ref = refdata.lookup(ReferenceLookup(g.ticker, t.relation, t.timestamp))
            except NotFoundError:
                report.unresolved.append((t, "not-found"))
            else:
                t = t.with_tail(ref.render())
                report.completed_count += 1
        attrs.add(t)
    return StockGraph(g.ticker, g.label, frozenset(attrs), g.event_records), report


CORRECTION_PROMPT = """The following passage comes from an equity research report about {head}.
An automatic extractor failed to fill the field "{relation}".

Passage:
{passage}

Reply with only the value of "{relation}" for {head}, including its unit where it has one.
If the passage does not contain it, reply exactly: No relevant information was found"""


def relevant_passage(doc: RefinedDoc, head: str, relation: str, max_chars: int = DEFAULT_PASSAGE_CHARS) -> str:
    needles = [n.casefold() for n in (head, relation) if n]
    for heading, text in doc.sections:
        hay = f"{heading}\n{text}".casefold()
        if any(n in hay for n in needles):
            return f"{heading}\n{text}".strip()[:max_chars]
    return doc.body_text[:max_chars]


def _parse_value(reply: str) -> str:
    text = reply.strip()
    if text.startswith("```"):
        text = text.strip("`").split("\n", 1)[-1].strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    if isinstance(value, dict):
        value = value.get("value", "")
    if not isinstance(value, (str, int, float)):
        return ""
    return " ".join(str(value).split()).strip("\"'")


def correct_errors(g: StockGraph, chat: ChatProvider, corpus: Mapping[str, RefinedDoc],
                   placeholders: Iterable[str] = PLACEHOLDERS,
                   numeric: Iterable[str] = NUMERIC_RELATIONS,
                   units: Iterable[str] = UNIT_LEXICON,
                   max_chars: int = DEFAULT_PASSAGE_CHARS) -> tuple[StockGraph, RefinementReport]:
    """Replace placeholder tails with re-extracted values.

    Triples that cannot be corrected are dropped and listed in the report.
    """
    placeholders = frozenset(p.strip() for p in placeholders)
    numeric = frozenset(numeric)
    report = RefinementReport()
    kept: list[TimedTriple] = []
    for item in g.items():
        if item.tail.strip() not in placeholders:
            kept.append(item)
            continue
        doc = corpus.get(item.doc_id)
        if doc is None:
            report.unresolved.append((item, "no-provenance"))
            continue
        prompt = CORRECTION_PROMPT.format(head=item.head, relation=item.relation,
                                          passage=relevant_passage(doc, item.head, item.relation, max_chars))
        try:
            value = _parse_value(chat.complete(ChatRequest(prompt)))
        except ProviderError as exc:
            logger.warning("correction failed for %s/%s: %s", item.head, item.relation, exc)
            report.unresolved.append((item, "provider-error"))
            continue
        if not value:
            report.unresolved.append((item, "unparseable"))
        elif value in placeholders:
            report.unresolved.append((item, "placeholder"))
        elif isinstance(item, AttributeTriple) and item.relation in numeric and not has_unit(value, units):
            report.unresolved.append((item, "no-unit"))
        else:
            kept.append(item.with_tail(value))
            report.corrected_count += 1
    attrs = frozenset(t for t in kept if isinstance(t, AttributeTriple))
    events = frozenset(t for t in kept if isinstance(t, EventRecord))
    return StockGraph(g.ticker, g.label, attrs, events), report


def refine_graph(g: StockGraph, aliases: AliasTable, refdata: ReferenceSource, chat: ChatProvider,
                 corpus: Mapping[str, RefinedDoc], **options) -> tuple[StockGraph, RefinementReport]:
    g1, normalized = _normalize(g, aliases)
    g2, completion = complete_attributes(g1, refdata,
                                         **{k: v for k, v in options.items() if k in ("numeric", "units")})
    g3, correction = correct_errors(g2, chat, corpus, **options)
    return g3, RefinementReport(normalized_count=normalized) + completion + correction

"""Attribute and event schemas.

The published schemas are built in; regenerating them through a chat
provider is opt-in and validated by the same code paths.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Literal

from .errors import SchemaParseError
from .providers import ChatProvider, ChatRequest

TemplateId = Literal["CFA", "JPM", "WIS", "FIBO"]
TEMPLATE_IDS: tuple[str, ...] = ("CFA", "JPM", "WIS", "FIBO")

ATTRIBUTE_RELATIONS: tuple[str, ...] = (
    "Stock Ticker",
    "Primary Exchange",
    "Primary Industry",
    "Investment Rating",
    "Current Stock Price",
    "Market Capitalization",
    "Target Price",
    "Major Shareholders",
    "Risk Assessment",
    "Key Products",
    "Research Institution",
)

EVENT_TREE: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("Supply", ("is provided by", "Capacity Adjustment", "Market Action", "Holds")),
    ("Demand", ("Sales", "Consumption", "Performance", "Is needed by")),
    ("Revenue", ("Earning", "Profit", "Income-oriented classifier", "Is issued by", "Has increased / decreased")),
    ("Efficiency Cost", ("Lower the cost", "Automation")),
    ("Strategic Action", ("Merger / Acquisition", "Overseas expansion", "Spin-off")),
    ("Technology Innovation", ("Is applicable in", "New product", "Has innovated", "Iteration")),
    ("Policy Regulation", ("Regulatory action", "Governs", "License")),
    ("Macro", ("Interest rate", "GDP", "Disaster")),
)


def _validate_names(names: Iterable[str], what: str) -> tuple[str, ...]:
    out = tuple(names)
    if not out:
        raise ValueError(f"{what} must be non-empty")
    if any(not isinstance(n, str) or not n.strip() for n in out):
        raise ValueError(f"{what} must be non-empty strings")
    if len(set(out)) != len(out):
        raise ValueError(f"{what} must be distinct")
    return out


@dataclass(frozen=True)
class AttributeSchema:
    relation_names: tuple[str, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "relation_names", _validate_names(self.relation_names, "attribute relations"))

    def __contains__(self, name: object) -> bool:
        return name in self.relation_names

    def __len__(self) -> int:
        return len(self.relation_names)


@dataclass(frozen=True)
class EventCategory:
    name: str
    subtypes: tuple[str, ...]

    def __post_init__(self) -> None:
        if not self.name or not self.name.strip():
            raise ValueError("category name must be non-empty")
        object.__setattr__(self, "subtypes", _validate_names(self.subtypes, f"subtypes of {self.name}"))


@dataclass(frozen=True)
class EventSchema:
    categories: tuple[EventCategory, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "categories", tuple(self.categories))
        _validate_names([c.name for c in self.categories], "event categories")

    @property
    def category_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.categories)

    def category(self, name: str) -> EventCategory:
        for c in self.categories:
            if c.name == name:
                return c
        raise KeyError(name)

    def __contains__(self, name: object) -> bool:
        return name in self.category_names


@dataclass(frozen=True)
class SchemaTemplate:
    template_id: str
    body: str

    def __post_init__(self) -> None:
        if self.template_id not in TEMPLATE_IDS:
            raise ValueError(f"unknown template id {self.template_id!r}")
        if not self.body.strip():
            raise ValueError("template body must be non-empty")


@dataclass(frozen=True)
class SchemaPair:
    attribute: AttributeSchema
    event: EventSchema

    @property
    def relation_type_count(self) -> int:
        return len(self.attribute) + len(self.event.categories)

    def to_json(self) -> dict:
        return {
            "attribute": list(self.attribute.relation_names),
            "event": [{"name": c.name, "subtypes": list(c.subtypes)} for c in self.event.categories],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SchemaPair":
        try:
            return cls(
                AttributeSchema(tuple(obj["attribute"])),
                EventSchema(tuple(EventCategory(c["name"], tuple(c["subtypes"])) for c in obj["event"])),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaParseError(f"invalid schema document: {exc}", raw=json.dumps(obj)) from exc

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "SchemaPair":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def builtin_attribute_schema() -> AttributeSchema:
    return AttributeSchema(ATTRIBUTE_RELATIONS)


def builtin_event_schema() -> EventSchema:
    return EventSchema(tuple(EventCategory(name, subs) for name, subs in EVENT_TREE))


def builtin_schemas() -> SchemaPair:
    return SchemaPair(builtin_attribute_schema(), builtin_event_schema())


def load_template(template_id: str) -> SchemaTemplate:
    if template_id not in TEMPLATE_IDS:
        raise ValueError(f"unknown template id {template_id!r}")
    body = resources.files("fingraph").joinpath("resources", "templates", f"{template_id}.txt").read_text("utf-8")
    return SchemaTemplate(template_id, body)


_FENCE = re.compile(r"^```[a-zA-Z]*\s*\n?(.*?)\n?```\s*$", re.DOTALL)


def parse_name_list(reply: str) -> list[str]:
    """Parse a JSON array of strings, falling back to one name per line."""
    text = reply.strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = None
    if isinstance(value, list):
        if not all(isinstance(v, str) for v in value):
            raise ValueError("list items must be strings")
        return [v.strip() for v in value]
    if value is not None:
        raise ValueError("expected a JSON array of strings")
    if text.startswith("[") or text.startswith("{"):
        raise ValueError("malformed JSON list")
    names = [re.sub(r"^\s*(?:[-*]|\d+[.)])\s*", "", line).strip() for line in text.splitlines()]
    return [n for n in names if n]


ATTRIBUTE_PROMPT = """You are designing the attribute schema of a company knowledge graph built from equity research reports.
Below are two reference templates describing how professional equity research reports are organized.

[Template: {first_id}]
{first}

[Template: {second_id}]
{second}

List the core company-level attribute relation types (stable facts such as ticker, exchange, industry, rating,
prices, valuation, ownership, risks, products, publishing institution) that every report should populate.
Answer with a JSON array of relation names only, e.g. ["Stock Ticker", "Primary Exchange"]."""

CATEGORY_PROMPT = """You are designing the top level of an event schema for financial research reports.
Read the following guidance on causal analysis of financial results:

{wis}

List the high-level driven categories that explain movements in a company's financial metrics.
Answer with a JSON array of category names only."""

EVENT_PROMPT = """You are refining the event schema of a financial knowledge graph.
High-level driven category: {category}

Relevant ontology context:
{fibo}

List the low-level event relation types (triggers) that belong to the category "{category}".
Answer with a JSON array of relation names only."""


def _template(templates: Iterable[SchemaTemplate], template_id: str) -> SchemaTemplate:
    for t in templates:
        if t.template_id == template_id:
            return t
    raise ValueError(f"template {template_id} is required")


def generate_attribute_schema(chat: ChatProvider, templates: Iterable[SchemaTemplate]) -> AttributeSchema:
    templates = list(templates)
    cfa, jpm = _template(templates, "CFA"), _template(templates, "JPM")
    prompt = ATTRIBUTE_PROMPT.format(first_id="CFA", first=cfa.body, second_id="JPM", second=jpm.body)
    reply = chat.complete(ChatRequest(prompt))
    try:
        return AttributeSchema(tuple(parse_name_list(reply)))
    except ValueError as exc:
        raise SchemaParseError(f"attribute schema: {exc}", raw=reply, stage="attributes") from exc


def generate_event_schema(chat: ChatProvider, wis: SchemaTemplate, fibo: SchemaTemplate) -> EventSchema:
    reply = chat.complete(ChatRequest(CATEGORY_PROMPT.format(wis=wis.body)))
    try:
        names = _validate_names(parse_name_list(reply), "event categories")
    except ValueError as exc:
        raise SchemaParseError(f"stage categories: {exc}", raw=reply, stage="categories") from exc

    categories = []
    for name in names:
        reply = chat.complete(ChatRequest(EVENT_PROMPT.format(category=name, fibo=fibo.body)))
        try:
            categories.append(EventCategory(name, tuple(parse_name_list(reply))))
        except ValueError as exc:
            raise SchemaParseError(f"stage subtypes, category {name}: {exc}", raw=reply,
                                   stage="subtypes", category=name) from exc
    return EventSchema(tuple(categories))

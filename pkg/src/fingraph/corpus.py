"""Research-report ingestion and boilerplate removal."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

import yaml

from .errors import EmptyDocumentError, PersistenceError

logger = logging.getLogger(__name__)

TEXT_SUFFIXES = (".md", ".txt")

DEFAULT_DISCLAIMER_PHRASES = ("免责声明", "Disclaimer", "法律声明", "分析师声明")

METADATA_SCAN_LINES = 40

_IMAGE_MD = re.compile(r"!\[[^\]]*\]\([^)]*\)")
_IMAGE_HTML = re.compile(r"<img\b[^>]*>", re.IGNORECASE)
_HEADING = re.compile(r"^(#{1,6})\s+(.*?)\s*#*\s*$")
_FRONT_MATTER = re.compile(r"\A---\s*\n(.*?)\n---\s*(?:\n|\Z)", re.DOTALL)
_FILENAME_DATE = re.compile(r"(?<!\d)(\d{4})(\d{2})(\d{2})(?!\d)")

# Labeled-field scan: label (case-insensitive) -> metadata attribute.
_LABELS = {
    "ticker": "ticker",
    "stock ticker": "ticker",
    "stock code": "ticker",
    "company": "company",
    "company name": "company",
    "institution": "institution",
    "research institution": "institution",
    "publish date": "publish_date",
    "date": "publish_date",
    "report date": "publish_date",
}
_LABEL_LINE = re.compile(r"^\s*(?:[-*]\s*)?(?:\*\*)?([A-Za-z][A-Za-z ]*?)(?:\*\*)?\s*[:：]\s*(.+?)\s*$")


@dataclass(frozen=True)
class RawReport:
    doc_id: str
    source_path: Path
    body: str
    fetched_at: datetime


@dataclass(frozen=True)
class RefinedDoc:
    doc_id: str
    publish_date: date | None
    sections: tuple[tuple[str, str], ...]
    body_text: str
    ticker: str | None = None
    institution: str | None = None
    company: str | None = None

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "ticker": self.ticker,
            "company": self.company,
            "institution": self.institution,
            "publish_date": self.publish_date.isoformat() if self.publish_date else None,
            "sections": [list(s) for s in self.sections],
            "body_text": self.body_text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RefinedDoc":
        pd = obj.get("publish_date")
        return cls(
            doc_id=obj["doc_id"],
            publish_date=date.fromisoformat(pd) if pd else None,
            sections=tuple((h, t) for h, t in obj.get("sections", [])),
            body_text=obj["body_text"],
            ticker=obj.get("ticker"),
            institution=obj.get("institution"),
            company=obj.get("company"),
        )


def ingest_directory(path: str | Path) -> list[RawReport]:
    """Read every ``.md``/``.txt`` file in ``path`` (non-recursive), sorted by name.

    Other files are skipped with one logged warning each.
    """
    root = Path(path)
    try:
        entries = sorted(p for p in root.iterdir() if p.is_file())
    except OSError as exc:
        raise PersistenceError(f"cannot read corpus directory {root}: {exc}") from exc

    reports = []
    for p in entries:
        if p.suffix.lower() not in TEXT_SUFFIXES:
            logger.warning("skipping non-text file %s", p.name)
            continue
        try:
            body = p.read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            logger.warning("skipping unreadable file %s: %s", p.name, exc)
            continue
        fetched = datetime.fromtimestamp(p.stat().st_mtime, tz=timezone.utc)
        reports.append(RawReport(doc_id=p.stem, source_path=p, body=body, fetched_at=fetched))
    return reports


def _norm_ws(text: str) -> str:
    return " ".join(text.split())


def _parse_date(value) -> date | None:
    if isinstance(value, datetime):
        return value.date()
    if isinstance(value, date):
        return value
    text = str(value).strip()
    for fmt in ("%Y-%m-%d", "%Y/%m/%d", "%Y%m%d", "%Y.%m.%d", "%Y年%m月%d日"):
        try:
            return datetime.strptime(text, fmt).date()
        except ValueError:
            continue
    return None


def _split_front_matter(body: str) -> tuple[dict, str]:
    m = _FRONT_MATTER.match(body)
    if not m:
        return {}, body
    try:
        meta = yaml.safe_load(m.group(1)) or {}
    except yaml.YAMLError:
        return {}, body
    if not isinstance(meta, dict):
        return {}, body
    return meta, body[m.end():]


def _scan_metadata(front: dict, lines: Sequence[str]) -> dict:
    meta: dict = {}
    for key, value in front.items():
        attr = _LABELS.get(str(key).strip().lower().replace("_", " "))
        if attr and value not in (None, ""):
            meta.setdefault(attr, value)
    for line in lines[:METADATA_SCAN_LINES]:
        m = _LABEL_LINE.match(line)
        if not m:
            continue
        attr = _LABELS.get(m.group(1).strip().lower())
        if attr:
            meta.setdefault(attr, m.group(2))
    return meta


class Refiner:
    """Normalizes one report into sections of clean paragraphs.

    Paragraph unit is one non-blank line. A paragraph is dropped when it is an
    image reference, starts with a disclaimer phrase, or repeats an earlier
    paragraph (whitespace-normalized). A heading that starts with a disclaimer
    phrase drops its whole section.
    """

    def __init__(self, disclaimer_phrases: Iterable[str] = DEFAULT_DISCLAIMER_PHRASES):
        self.disclaimer_phrases = tuple(p.casefold() for p in disclaimer_phrases)

    def _is_disclaimer(self, text: str) -> bool:
        folded = text.lstrip(" *_>#-").casefold()
        return any(folded.startswith(p) for p in self.disclaimer_phrases)

    def refine(self, raw: RawReport) -> RefinedDoc:
        if not raw.body.strip():
            raise EmptyDocumentError(f"{raw.doc_id}: empty body")
        front, body = _split_front_matter(raw.body)
        lines = body.splitlines()
        meta = _scan_metadata(front, lines)

        preamble: list[str] = []
        sections: list[tuple[str, list[str]]] = []
        seen: set[str] = set()
        skip_level: int | None = None  # inside a disclaimer section at this heading level

        for line in lines:
            h = _HEADING.match(line)
            if h and not _norm_ws(h.group(2)):
                continue  # a bare "##" marks no section
            if h:
                level, title = len(h.group(1)), _norm_ws(h.group(2))
                if skip_level is not None and level > skip_level:
                    continue
                skip_level = None
                if self._is_disclaimer(title):
                    skip_level = level
                    continue
                sections.append((title, []))
                continue
            if skip_level is not None:
                continue
            text = _norm_ws(_IMAGE_HTML.sub("", _IMAGE_MD.sub("", line)))
            if not text or self._is_disclaimer(text) or text in seen:
                continue
            seen.add(text)
            (sections[-1][1] if sections else preamble).append(text)

        kept = tuple((title, "\n".join(paras)) for title, paras in sections if paras)
        if not preamble and not kept:
            raise EmptyDocumentError(f"{raw.doc_id}: nothing left after filtering")

        parts = ["\n".join(preamble)] if preamble else []
        parts += [f"## {title}\n{text}" if title else text for title, text in kept]
        body_text = "\n\n".join(parts)

        publish_date = _parse_date(meta["publish_date"]) if "publish_date" in meta else None
        if publish_date is None:
            m = _FILENAME_DATE.search(raw.source_path.name)
            if m:
                publish_date = _parse_date("".join(m.groups()))

        def _opt(key: str) -> str | None:
            value = meta.get(key)
            return _norm_ws(str(value)) if value not in (None, "") else None

        return RefinedDoc(
            doc_id=raw.doc_id,
            publish_date=publish_date,
            sections=kept,
            body_text=body_text,
            ticker=_opt("ticker"),
            institution=_opt("institution"),
            company=_opt("company"),
        )


def refine(raw: RawReport, disclaimer_phrases: Iterable[str] = DEFAULT_DISCLAIMER_PHRASES) -> RefinedDoc:
    return Refiner(disclaimer_phrases).refine(raw)


def write_jsonl(docs: Iterable[RefinedDoc], path: str | Path) -> None:
    ordered = sorted(docs, key=lambda d: d.doc_id)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for doc in ordered:
                fh.write(json.dumps(doc.to_json(), ensure_ascii=False, sort_keys=True) + "\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc


def read_jsonl(path: str | Path) -> list[RefinedDoc]:
    try:
        with open(path, encoding="utf-8") as fh:
            return [RefinedDoc.from_json(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc

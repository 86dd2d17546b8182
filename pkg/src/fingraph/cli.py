"""Command-line pipeline: ingest, build, index, query, backtest, stats.

Configuration precedence is flags > ``FINKARIO_<KEY>`` environment variables >
``--config`` file (flat ``key = value`` lines) > defaults.

Exit codes: 0 success, 1 empty input, 2 I/O, 3 configuration, 4 staleness,
5 provider failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

from . import corpus as corpus_mod
from .backtest import (PriceTable, TradingCalendar, compute_metrics, directional_outcomes, emit_report,
                       simulate)
from .errors import ConfigError, EmptyDocumentError, EmptyInputError, FingraphError, PersistenceError, ProviderError
from .extraction import ChatExtractor, RuleExtractor, build_stock_graph, extract_document, stock_key, write_batches
from .graphstore import GraphStore
from .guidance import ChatAnalyst, MockAnalyst, Signal, write_signals
from .providers import (DEFAULT_DIMENSION, ENV_CHAT_URL, CsvReferenceSource, HashingEmbedder, HttpChat,
                        HttpEmbedder, ScriptedChat)
from .refinement import AliasTable, RefinementReport, refine_graph
from .retrieval import DEFAULT_K_COARSE, DEFAULT_K_FINE, retrieve
from .schema import SchemaPair, builtin_schemas, generate_attribute_schema, generate_event_schema, load_template
from .vectorstore import VectorIndex, encode_graph, ingest, load_index, save_index

logger = logging.getLogger("fingraph")

ENV_PREFIX = "FINKARIO_"


@dataclass
class PipelineConfig:
    workdir: str = "."
    corpus_dir: str | None = None
    refined_path: str | None = None
    store_root: str | None = None
    index_path: str | None = None
    out_dir: str | None = None
    signals_path: str | None = None
    schema_mode: str = "builtin"
    schema_file: str | None = None
    extractor: str = "rule"
    chat_provider: str | None = None
    chat_fixtures: str | None = None
    embed_provider: str = "hashing"
    dimension: int = DEFAULT_DIMENSION
    analyst: str = "mock"
    refdata_path: str | None = None
    aliases_path: str | None = None
    prices: str | None = None
    calendar: str | None = None
    k_c: int = DEFAULT_K_COARSE
    k_f: int = DEFAULT_K_FINE
    window_days: int = 0
    date_start: str | None = None
    date_end: str | None = None

    def __post_init__(self) -> None:
        for name in ("dimension", "k_c", "k_f", "window_days"):
            try:
                setattr(self, name, int(getattr(self, name)))
            except (TypeError, ValueError):
                raise ConfigError(f"{name} must be an integer") from None
        if self.k_c < 1 or self.k_f < 1:
            raise ConfigError("k_c and k_f must be >= 1")
        if self.dimension < 1:
            raise ConfigError("dimension must be positive")
        if self.window_days < 0:
            raise ConfigError("window_days must be >= 0")
        if self.schema_mode not in ("builtin", "generate", "file"):
            raise ConfigError(f"unknown schema_mode {self.schema_mode!r}")
        if self.schema_mode == "file" and not self.schema_file:
            raise ConfigError("schema_mode=file needs schema_file")
        w = Path(self.workdir)
        self.refined_path = self.refined_path or str(w / "refined.jsonl")
        self.store_root = self.store_root or str(w / "store")
        self.index_path = self.index_path or str(w / "index.bin")
        self.out_dir = self.out_dir or str(w / "report")
        self.signals_path = self.signals_path or str(w / "signals.jsonl")

    # --- providers ----------------------------------------------------------------

    def chat(self):
        provider = self.chat_provider or ("http" if os.environ.get(ENV_CHAT_URL) else "scripted")
        if provider == "http":
            return HttpChat.from_env()
        if provider != "scripted":
            raise ConfigError(f"unknown chat_provider {provider!r}")
        fixtures = {}
        if self.chat_fixtures:
            try:
                fixtures = json.loads(Path(self.chat_fixtures).read_text(encoding="utf-8"))
            except (OSError, ValueError) as exc:
                raise ConfigError(f"cannot read chat fixtures {self.chat_fixtures}: {exc}") from exc
        return ScriptedChat(fixtures)

    def has_live_chat(self) -> bool:
        provider = self.chat_provider or ("http" if os.environ.get(ENV_CHAT_URL) else "scripted")
        return provider == "http" or bool(self.chat_fixtures)

    def embedder(self):
        if self.embed_provider == "hashing":
            return HashingEmbedder(self.dimension)
        if self.embed_provider == "http":
            return HttpEmbedder.from_env(self.dimension)
        raise ConfigError(f"unknown embed_provider {self.embed_provider!r}")

    def refdata(self):
        if not self.refdata_path:
            return CsvReferenceSource()
        try:
            return CsvReferenceSource.from_csv(self.refdata_path)
        except OSError as exc:
            raise PersistenceError(f"cannot read reference data {self.refdata_path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def aliases(self) -> AliasTable:
        if not self.aliases_path:
            return AliasTable()
        try:
            return AliasTable.load(self.aliases_path)
        except OSError as exc:
            raise PersistenceError(f"cannot read alias table {self.aliases_path}: {exc}") from exc
        except ValueError as exc:
            raise ConfigError(f"invalid alias table: {exc}") from exc


CONFIG_KEYS = tuple(f.name for f in fields(PipelineConfig))


def read_config_file(path: str | Path) -> dict[str, str]:
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key = key.strip().replace("-", "_")
        if not sep or key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{n}: unknown or malformed setting {line!r}")
        values[key] = value.strip()
    return values


def resolve_config(flags: Mapping[str, object], env: Mapping[str, str] | None = None,
                   config_file: str | None = None) -> PipelineConfig:
    env = os.environ if env is None else env
    merged: dict[str, object] = {}
    if config_file:
        merged.update(read_config_file(config_file))
    for key in CONFIG_KEYS:
        if f"{ENV_PREFIX}{key.upper()}" in env:
            merged[key] = env[f"{ENV_PREFIX}{key.upper()}"]
    merged.update({k: v for k, v in flags.items() if k in CONFIG_KEYS and v is not None})
    return PipelineConfig(**merged)


def file_hash(path: str | Path) -> str:
    h = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 16), b""):
                h.update(chunk)
    except OSError as exc:
        raise PersistenceError(f"cannot read {path}: {exc}") from exc
    return h.hexdigest()


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False))


# --- commands ---------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig) -> int:
    if not cfg.corpus_dir:
        raise ConfigError("corpus_dir is required (--corpus)")
    raws = corpus_mod.ingest_directory(cfg.corpus_dir)
    if not raws:
        raise EmptyInputError("no documents")
    refiner = corpus_mod.Refiner()
    docs = []
    for raw in raws:
        try:
            docs.append(refiner.refine(raw))
        except EmptyDocumentError as exc:
            logger.warning("skipping %s: %s", raw.doc_id, exc)
    if not docs:
        raise EmptyInputError("no documents survived refinement")
    Path(cfg.refined_path).parent.mkdir(parents=True, exist_ok=True)
    corpus_mod.write_jsonl(docs, cfg.refined_path)
    print(f"refined {len(docs)} of {len(raws)} documents -> {cfg.refined_path}")
    return 0


def _schemas(cfg: PipelineConfig) -> SchemaPair:
    if cfg.schema_mode == "builtin":
        return builtin_schemas()
    if cfg.schema_mode == "file":
        try:
            return SchemaPair.load(cfg.schema_file)
        except OSError as exc:
            raise PersistenceError(f"cannot read schema file {cfg.schema_file}: {exc}") from exc
    if not cfg.has_live_chat():
        raise ConfigError("schema_mode=generate needs chat credentials or chat fixtures")
    chat = cfg.chat()
    templates = [load_template(t) for t in ("CFA", "JPM", "WIS", "FIBO")]
    return SchemaPair(generate_attribute_schema(chat, templates[:2]),
                      generate_event_schema(chat, templates[2], templates[3]))


def cmd_build(cfg: PipelineConfig) -> int:
    docs = corpus_mod.read_jsonl(cfg.refined_path)
    if not docs:
        raise EmptyInputError("refined corpus is empty")
    schemas = _schemas(cfg)
    if cfg.extractor == "rule":
        extractor = RuleExtractor()
    elif cfg.extractor == "chat":
        extractor = ChatExtractor(cfg.chat())
    else:
        raise ConfigError(f"unknown extractor {cfg.extractor!r}")
    aliases = cfg.aliases()
    refdata = cfg.refdata()
    chat = cfg.chat()

    batches = []
    for doc in docs:
        if doc.publish_date is None:
            logger.warning("skipping %s: no publish date", doc.doc_id)
            continue
        batches.append(extract_document(doc, schemas.attribute, schemas.event, extractor))
    if not batches:
        raise EmptyInputError("no dated documents to extract from")

    by_ticker: dict[str, list] = {}
    for b in batches:
        by_ticker.setdefault(b.ticker, []).append(b)

    store = GraphStore(cfg.store_root)
    store.reset()
    corpus_by_id = {d.doc_id: d for d in docs}
    report = RefinementReport()

    def key(label: str) -> str:
        return stock_key(aliases.canonicalize(label))

    for ticker in sorted(by_ticker):
        group = by_ticker[ticker]
        labels = sorted(aliases.canonicalize(b.stock) for b in group)
        label = max(sorted(set(labels)), key=labels.count)
        raw = build_stock_graph(group, label, ticker, key=key)
        refined, rep = refine_graph(raw, aliases, refdata, chat, corpus_by_id)
        report = report + rep
        store.upsert(refined)
    store.set_build_id(file_hash(cfg.refined_path))

    root = Path(cfg.store_root)
    write_batches(batches, root / "extracted.jsonl")
    schemas.save(root / "schema.json")
    (root / "refinement_report.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    _emit(store.stats().to_json())
    return 0


def cmd_index(cfg: PipelineConfig) -> int:
    store = GraphStore(cfg.store_root)
    graphs = store.graphs()
    if not graphs:
        raise EmptyInputError("graph store is empty")
    embedder = cfg.embedder()
    index = VectorIndex(embedder.dimension, build_id=store.build_id or "")
    for g in graphs:
        if g.is_empty():
            continue
        index = ingest(index, encode_graph(g, embedder))
    save_index(index, cfg.index_path)
    print(f"indexed {len(index)} vectors from {len(graphs)} stocks -> {cfg.index_path}")
    return 0


def _analyst(cfg: PipelineConfig):
    if cfg.analyst == "mock":
        return MockAnalyst()
    if cfg.analyst == "chat":
        return ChatAnalyst(cfg.chat())
    raise ConfigError(f"unknown analyst {cfg.analyst!r}")


def cmd_query(cfg: PipelineConfig, q: str | None, when: str | None = None, explain: bool = False,
              all_reports: bool = False, save_signals: bool = False) -> int:
    if not all_reports and (q is None or not q.strip()):
        raise ConfigError("query text must be non-empty")
    store = GraphStore(cfg.store_root)
    index = load_index(cfg.index_path)
    embedder = cfg.embedder()
    analyst = _analyst(cfg)
    signals: list[Signal] = []

    if all_reports:
        jobs = []
        for doc in corpus_mod.read_jsonl(cfg.refined_path):
            if doc.ticker and doc.publish_date:
                name = doc.company or doc.ticker
                jobs.append((f"{name} {doc.ticker} outlook", doc.ticker, doc.publish_date))
        for text, ticker, as_of in sorted(set(jobs), key=lambda j: (j[1], j[2])):
            g_sub, _ = retrieve(text, index, store, embedder, cfg.k_c, cfg.k_f, cfg.window_days, as_of=as_of)
            signals.append(analyst(text, g_sub, ticker, as_of))
        for s in signals:
            print(f"SIGNAL {s.stock} {s.signal_date.isoformat()} {s.label} {s.confidence:.2f}")
    else:
        as_of = date.fromisoformat(when) if when else None
        g_sub, anchors = retrieve(q, index, store, embedder, cfg.k_c, cfg.k_f, cfg.window_days, as_of=as_of)
        for a in anchors:
            print(f"ANCHOR {a.stock} {a.date.isoformat() if a.date else '-'} {a.score:.4f}")
        if explain:
            _emit(g_sub.to_json(anchors))
        if not anchors:
            raise EmptyInputError("no anchors retrieved")
        dates = [t.timestamp for t in g_sub.items()]
        signal_date = as_of or (max(dates) if dates else anchors[0].date) or date.today()
        s = analyst(q, g_sub, anchors[0].stock, signal_date)
        signals.append(s)
        print(f"SIGNAL {s.stock} {s.signal_date.isoformat()} {s.label} {s.confidence:.2f}")
        print(f"RATIONALE {s.rationale}")
    if all_reports or save_signals:
        write_signals(signals, cfg.signals_path)
    return 0


def _industries(store_root: str) -> dict[str, str]:
    store = GraphStore(store_root)
    out = {}
    for g in store.graphs():
        rows = sorted((t.timestamp, t.tail) for t in g.attribute_triples if t.relation == "Primary Industry")
        if rows:
            out[g.ticker] = rows[-1][1]
    return out


def cmd_backtest(cfg: PipelineConfig, figures: bool = True) -> int:
    if not cfg.prices:
        raise ConfigError("prices file is required (--prices)")
    prices = PriceTable.from_csv(cfg.prices)
    cal = TradingCalendar.from_file(cfg.calendar) if cfg.calendar else TradingCalendar.from_prices(prices)
    from .guidance import read_signals

    signals = read_signals(cfg.signals_path)
    if cfg.date_start or cfg.date_end:
        lo = date.fromisoformat(cfg.date_start) if cfg.date_start else date.min
        hi = date.fromisoformat(cfg.date_end) if cfg.date_end else date.max
        signals = [s for s in signals if lo <= s.signal_date <= hi]
    result = simulate(signals, prices, cal)
    metrics = compute_metrics(result.nav, result.trades, directional_outcomes(signals, prices, cal))
    industries = _industries(cfg.store_root) if Path(cfg.store_root, "stocks").is_dir() else None
    emit_report(metrics, result.nav, result.trades, cfg.out_dir, industries, figures=figures)
    _emit(metrics.to_json())
    return 0


def cmd_stats(cfg: PipelineConfig) -> int:
    _emit(GraphStore(cfg.store_root).stats().to_json())
    return 0


# --- argument parsing -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--workdir", help="default location for derived files")
    common.add_argument("--store", dest="store_root", help="graph store root directory")
    common.add_argument("--refined", dest="refined_path", help="refined corpus JSON Lines file")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="fingraph", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="refine a directory of reports")
    p.add_argument("--corpus", dest="corpus_dir")

    p = sub.add_parser("build", parents=[common], help="extract, refine and store the knowledge graph")
    p.add_argument("--schema-mode", choices=("builtin", "generate", "file"))
    p.add_argument("--schema-file")
    p.add_argument("--extractor", choices=("rule", "chat"))
    p.add_argument("--aliases", dest="aliases_path")
    p.add_argument("--refdata", dest="refdata_path")
    p.add_argument("--chat-provider", choices=("scripted", "http"))
    p.add_argument("--chat-fixtures")

    p = sub.add_parser("index", parents=[common], help="vectorize stored graphs")
    p.add_argument("--index", dest="index_path")
    p.add_argument("--dimension", type=int)
    p.add_argument("--embed-provider", choices=("hashing", "http"))

    p = sub.add_parser("query", parents=[common], help="retrieve a subgraph and emit a signal")
    p.add_argument("q", nargs="?", help="query text")
    p.add_argument("--index", dest="index_path")
    p.add_argument("--dimension", type=int)
    p.add_argument("--embed-provider", choices=("hashing", "http"))
    p.add_argument("--k-c", type=int)
    p.add_argument("--k-f", type=int)
    p.add_argument("--window-days", type=int)
    p.add_argument("--date", help="signal date; retrieval ignores records after it")
    p.add_argument("--analyst", choices=("mock", "chat"))
    p.add_argument("--chat-provider", choices=("scripted", "http"))
    p.add_argument("--chat-fixtures")
    p.add_argument("--explain", action="store_true", help="print the retrieved subgraph as JSON")
    p.add_argument("--all-reports", action="store_true", help="one signal per (stock, report date)")
    p.add_argument("--signals-out", dest="signals_path")

    p = sub.add_parser("backtest", parents=[common], help="simulate signals and report metrics")
    p.add_argument("--prices")
    p.add_argument("--signals", dest="signals_path")
    p.add_argument("--calendar")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--start", dest="date_start")
    p.add_argument("--end", dest="date_end")
    p.add_argument("--no-figures", action="store_true")

    sub.add_parser("stats", parents=[common], help="print graph statistics")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = resolve_config(vars(args), config_file=args.config)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "build":
            return cmd_build(cfg)
        if args.command == "index":
            return cmd_index(cfg)
        if args.command == "query":
            return cmd_query(cfg, args.q, args.date, args.explain, args.all_reports,
                             save_signals=args.signals_path is not None)
        if args.command == "backtest":
            return cmd_backtest(cfg, figures=not args.no_figures)
        return cmd_stats(cfg)
    except FingraphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return PersistenceError.exit_code
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())

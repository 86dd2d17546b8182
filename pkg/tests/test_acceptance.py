"""Acceptance gate. Each test carries an ``acceptance`` marker; the terminal summary prints one line per criterion."""

from __future__ import annotations

import json
import random
import re
import time
from datetime import date, timedelta

import numpy as np
import pytest

from conftest import run_pipeline
from fingraph.backtest import (PriceTable, TradingCalendar, compute_metrics, directional_outcomes, max_drawdown,
                               next_trading_day, simulate, week_exit)
from fingraph.corpus import read_jsonl
from fingraph.graph import AttributeTriple, EventRecord, StockGraph
from fingraph.graphstore import GraphStore
from fingraph.guidance import ChatAnalyst
from fingraph.providers import CsvReferenceSource, HashingEmbedder, ScriptedChat
from fingraph.refinement import NUMERIC_RELATIONS, PLACEHOLDERS, AliasTable, has_unit, normalize_entities, refine_graph
from fingraph.retrieval import encode_query, retrieve
from fingraph.schema import builtin_schemas
from fingraph.vectorstore import VectorIndex, VectorRecord, encode_graph, ingest, load_index, mips_search
from oracles import brute_subgraph, max_drawdown_pairs, record_order, table_ratio

acceptance = pytest.mark.acceptance


class Budget:
    def __init__(self, seconds: float):
        self.seconds = seconds

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.seconds, f"took {self.elapsed:.2f}s, budget {self.seconds}s"


# --- 1: published metric identities ----------------------------------------------------

# (ARR, VOL, MDD) and the printed (SR, CR) for three rows of the results table.
TABLE_ROWS = {
    "CSI 300": ((0.392, 0.295, 0.091), (1.330, 4.332)),
    "graph-retrieval strategy": ((2.633, 0.534, 0.172), (4.926, 15.315)),
    "SOOCHOW": ((1.625, 0.522, 0.132), (3.115, 12.311)),
}


@acceptance(1, title="published SR/CR reproduce from ARR, VOL, MDD within 0.02")
@pytest.mark.parametrize("metric", ["SR", "CR"])
@pytest.mark.parametrize("row", list(TABLE_ROWS))
def test_table_metric_identities(row, metric):
    from fingraph.backtest import calmar_ratio, sharpe_ratio

    (arr, vol, mdd), (sr, cr) = TABLE_ROWS[row]
    with Budget(1.0):
        got = sharpe_ratio(arr, vol) if metric == "SR" else calmar_ratio(arr, mdd)
    want = sr if metric == "SR" else cr
    assert got == pytest.approx(table_ratio(arr, vol if metric == "SR" else mdd), rel=1e-12)
    assert abs(got - want) <= 0.02, f"{row} {metric}: {got:.4f} vs printed {want} (diff {abs(got - want):.4f})"


# --- 2: schema accounting -------------------------------------------------------------


@acceptance(2, title="11 attribute relations + 8 event categories, 19 relation types on the fixture build")
def test_schema_accounting(synthetic_workdir):
    with Budget(1.0):
        schemas = builtin_schemas()
        stats = GraphStore(synthetic_workdir / "store").stats()
    assert len(schemas.attribute.relation_names) == 11
    assert len(schemas.event.categories) == 8
    used = {t.relation for g in GraphStore(synthetic_workdir / "store").graphs() for t in g.attribute_triples}
    used |= {e.category for g in GraphStore(synthetic_workdir / "store").graphs() for e in g.event_records}
    assert stats.relation_type_count <= 19
    assert used == set(schemas.attribute.relation_names) | {c.name for c in schemas.event.categories}
    assert stats.relation_type_count == 19


# --- 3: retrieval against an exhaustive scan -------------------------------------------

WORDS = ["battery", "lithium", "export", "plant", "margin", "demand", "policy", "subsidy", "liquor", "vaccine",
         "chip", "solar", "steel", "freight", "rate", "tariff", "brand", "channel", "price", "capacity"]
ATTR_RELS = ["Primary Industry", "Key Products", "Target Price", "Rating", "Main Business"]
CATEGORIES = ["Supply", "Demand", "Revenue", "Macro", "Technology Innovation"]
REPORT_DATES = [date(2024, 9, 2) + timedelta(days=7 * i) for i in range(6)]


def random_corpus(rng: random.Random) -> list[StockGraph]:
    graphs = []
    for i in range(rng.randint(1, 20)):
        name = f"{rng.choice(WORDS).title()}{i}"
        items = []
        for _ in range(rng.randint(1, 6)):
            when = rng.choice(REPORT_DATES)
            if rng.random() < 0.5:
                items.append(AttributeTriple(name, rng.choice(ATTR_RELS), " ".join(rng.sample(WORDS, 2)), when, "d"))
            else:
                items.append(EventRecord(name, rng.choice(WORDS), rng.choice(WORDS), rng.choice(CATEGORIES), when,
                                         "", "", "d"))
        graphs.append(StockGraph(f"{600000 + i}.SH", name,
                                 frozenset(t for t in items if isinstance(t, AttributeTriple)),
                                 frozenset(t for t in items if isinstance(t, EventRecord))))
    return graphs


def check_scoping(sub, anchors, window_days, as_of):
    """Every triple belongs to an anchored stock; dates stay within the anchor window plus the mapping window."""
    for ticker, item in sub.triples:
        assert any(a.stock == ticker and (a.date is None or abs((item.timestamp - a.date).days) <= 2 * window_days)
                   for a in anchors), (ticker, item)
        assert as_of is None or item.timestamp <= as_of


@acceptance(3, title="two-stage retrieval equals an exhaustive anchor-filtered scan on 100 random corpora")
def test_retrieval_oracle_equivalence(tmp_path):
    rng = random.Random(20240902)
    emb = HashingEmbedder(64)
    with Budget(30.0):
        for n in range(100):
            graphs = random_corpus(rng)
            store = GraphStore(tmp_path / f"c{n}")
            index = VectorIndex(emb.dimension, build_id=f"b{n}")
            for g in graphs:
                store.upsert(g)
                index = ingest(index, encode_graph(g, emb))
            store.set_build_id(f"b{n}")
            assert len(index) <= 500
            by_ticker = {g.ticker: g for g in graphs}

            q = " ".join(rng.sample(WORDS, 3) + [rng.choice(graphs).label])
            window = rng.choice([0, 0, 7])
            as_of = rng.choice([None, rng.choice(REPORT_DATES)])
            h_q = encode_query(q, emb)

            sub, anchors = retrieve(q, index, store, emb, 10**6, 10**6, window, as_of=as_of)
            want_anchors, _, want = brute_subgraph(index.records, by_ticker, h_q, None, None, window, as_of)
            assert set(sub.triples) == want
            assert [(a.stock, a.date) for a in anchors] == [a for a, _ in want_anchors]
            check_scoping(sub, anchors, window, as_of)
            assert all(store.contains(t, item) for t, item in sub.triples)

            k_c, k_f = rng.randint(1, 4), rng.randint(1, 25)
            sub, anchors = retrieve(q, index, store, emb, k_c, k_f, window, as_of=as_of)
            _, _, want = brute_subgraph(index.records, by_ticker, h_q, k_c, k_f, window, as_of)
            assert set(sub.triples) == want
            check_scoping(sub, anchors, window, as_of)
            assert all(store.contains(t, item) for t, item in sub.triples)


# --- 4: exact inner-product search -----------------------------------------------------


@acceptance(4, title="top-k search equals a full sort with the documented tie-break")
def test_mips_exactness():
    rng = np.random.default_rng(7)
    dim, n = 64, 1000
    records = []
    for i in range(n):
        if i % 10 == 9:
            vec = records[int(rng.integers(len(records)))].vector  # exact score ties
        else:
            vec = rng.normal(size=dim)
            vec = vec / np.linalg.norm(vec)
        records.append(VectorRecord(f"e{int(rng.integers(0, 400)):03d}#x", "entity", vec, "",
                                    f"S{int(rng.integers(0, 30)):02d}", date(2024, 1, 1) + timedelta(days=i % 90)))
    index = ingest(VectorIndex(dim), records)
    matrix = np.stack([r.vector for r in index.records])
    with Budget(10.0):
        for _ in range(1000):
            q = rng.normal(size=dim)
            q = q / np.linalg.norm(q)
            scores = matrix @ q
            ordered = sorted(zip(scores.tolist(), index.records), key=lambda p: record_order(*p))
            for k in (1, 5, 50):
                got = mips_search(index, q, k)
                assert [r.identity for r, _ in got] == [r.identity for _, r in ordered[:k]]


# --- 5: refinement ---------------------------------------------------------------------


@acceptance(5, title="refinement is idempotent, leaves no placeholders, completes caps, maps aliases")
def test_refinement_suite(synthetic_workdir, synthetic_dir):
    aliases = AliasTable.load(synthetic_dir / "aliases.json")
    refdata = CsvReferenceSource.from_csv(synthetic_dir / "refdata.csv")
    chat = ScriptedChat(json.loads((synthetic_dir / "chat_fixtures.json").read_text()))
    corpus = {d.doc_id: d for d in read_jsonl(synthetic_workdir / "refined.jsonl")}
    store = GraphStore(synthetic_workdir / "store")
    report = json.loads((synthetic_workdir / "store" / "refinement_report.json").read_text())

    with Budget(1.0):
        for g in store.graphs():
            again, rep = refine_graph(g, aliases, refdata, chat, corpus)
            assert again == g and rep.counts == (0, 0, 0), g.ticker
            for item in g.items():
                assert item.tail.strip() not in PLACEHOLDERS
                assert all(p not in item.tail for p in PLACEHOLDERS if p)

        assert report["completed_count"] >= 1
        caps = [t for t in store.graph("300750.SZ").attribute_triples if t.relation == "Market Capitalization"]
        filled = next(t for t in caps if t.timestamp == date(2024, 10, 31))
        assert filled.tail == "904.6 CNY billions"
        for g in store.graphs():
            for t in g.attribute_triples:
                if t.relation in NUMERIC_RELATIONS:
                    assert t.tail == "" or has_unit(t.tail) or any(
                        u["relation"] == t.relation and u["timestamp"] == t.timestamp.isoformat()
                        for u in report["unresolved"]), t

        for label in ("BYD Inc.", "BYD Auto"):
            assert aliases.canonicalize(label) == "BYD"
            raw = StockGraph("002594.SZ", label,
                             frozenset({AttributeTriple(label, "Primary Industry", "Automobiles", date(2024, 9, 2),
                                                        "d")}), frozenset())
            assert {t.head for t in normalize_entities(raw, aliases).attribute_triples} == {"BYD"}
        assert store.graph("002594.SZ").label == "BYD"
        assert {t.head for t in store.graph("002594.SZ").attribute_triples} == {"BYD"}


# --- 6: backtest hand-check ------------------------------------------------------------


@acceptance(6, title="hand-computed backtest fixture reproduced to 1e-9")
def test_backtest_hand_check(tmp_path):
    from test_backtest import check_hand_fixture

    with Budget(1.0):
        check_hand_fixture(tmp_path, tol=1e-9)
        assert max_drawdown([1.0, 1.1, 0.99, 1.2]) == pytest.approx(0.10, abs=1e-12)
        assert max_drawdown_pairs([1.0, 1.1, 0.99, 1.2]) == pytest.approx(0.10, abs=1e-12)


# --- 7: perfect foresight --------------------------------------------------------------


def foresight_chat(prices: PriceTable, cal: TradingCalendar) -> ScriptedChat:
    """Answers the analyst prompt by looking up the realized holding-period return."""
    def respond(req):
        stock = re.search(r"^Stock: (\S+)$", req.user_text, re.M).group(1)
        when = date.fromisoformat(re.search(r"^As of: (\S+)$", req.user_text, re.M).group(1))
        entry = next_trading_day(cal, when)
        start, end = prices.close(stock, entry), prices.close(stock, week_exit(cal, when))
        label = "Rise" if start is not None and end is not None and end > start else "Fall"
        return json.dumps({"label": label, "confidence": 1.0, "rationale": "realized price path"})
    return ScriptedChat(responder=respond)


@acceptance(7, title="a price-reading analyst scores ACC 1.0 with a non-decreasing NAV")
def test_perfect_foresight(synthetic_workdir, synthetic_dir):
    with Budget(5.0):
        prices = PriceTable.from_csv(synthetic_dir / "prices.csv")
        cal = TradingCalendar.from_prices(prices)
        store = GraphStore(synthetic_workdir / "store")
        index = load_index(synthetic_workdir / "index.bin")
        emb = HashingEmbedder(index.dimension)
        analyst = ChatAnalyst(foresight_chat(prices, cal), source="foresight")
        signals = []
        for d in read_jsonl(synthetic_workdir / "refined.jsonl"):
            q = f"{d.company} {d.ticker} outlook"
            sub, _ = retrieve(q, index, store, emb, as_of=d.publish_date)
            signals.append(analyst(q, sub, d.ticker, d.publish_date))
        result = simulate(signals, prices, cal)
        metrics = compute_metrics(result.nav, result.trades, directional_outcomes(signals, prices, cal))
    assert len(signals) == 20 and result.trades
    assert metrics.acc == 1.0
    values = result.nav.values
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert metrics.mdd == 0.0


# --- 8: end-to-end determinism ---------------------------------------------------------


def run_everything(work, data) -> dict[str, bytes]:
    from fingraph.cli import main

    run_pipeline(work, data)
    assert main(["query", "--all-reports", "--workdir", str(work)]) == 0
    assert main(["backtest", "--workdir", str(work), "--prices", str(data / "prices.csv")]) == 0
    return {str(p.relative_to(work)): p.read_bytes() for p in sorted(work.rglob("*")) if p.is_file()}


@acceptance(8, title="offline pipeline runs twice with exit 0 and byte-identical outputs")
def test_end_to_end_determinism(tmp_path, synthetic_dir):
    with Budget(60.0):
        first = run_everything(tmp_path / "run1", synthetic_dir)
        second = run_everything(tmp_path / "run2", synthetic_dir)
    assert {"refined.jsonl", "index.bin", "signals.jsonl", "report/metrics.json", "report/nav.png"} <= set(first)
    assert first.keys() == second.keys()
    for name in first:
        assert first[name] == second[name], name

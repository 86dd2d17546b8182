from __future__ import annotations

from datetime import date

import numpy as np
import pytest

from builders import D1, D2, attr, byd_graph, event, graph
from fingraph.errors import StalenessError
from fingraph.graphstore import GraphStore
from fingraph.providers import HashingEmbedder
from fingraph.retrieval import (Anchor, Subgraph, coarse_retrieve, encode_query, fine_retrieve, map_to_subgraph,
                                retrieve)
from fingraph.vectorstore import VectorIndex, encode_graph, entity_texts, ingest
from oracles import brute_subgraph

EMB = HashingEmbedder(128)


def build(tmp_path, *graphs, build_id="b1"):
    store = GraphStore(tmp_path / "store")
    index = VectorIndex(EMB.dimension, build_id=build_id)
    for g in graphs:
        store.upsert(g)
        index = ingest(index, encode_graph(g, EMB))
    store.set_build_id(build_id)
    return store, index


def acme_graph():
    return graph("600000.SH", "Acme", attr("Acme", "Primary Industry", "Chemicals", D2),
                 attr("Acme", "Target Price", "9 CNY", D2), event("Acme", "GDP", "slowdown", "Macro", D2))


def test_encode_query_contract():
    a, b = encode_query("BYD outlook", EMB), encode_query("BYD outlook", EMB)
    assert np.array_equal(a, b) and abs(np.linalg.norm(a) - 1) < 1e-9
    with pytest.raises(ValueError):
        encode_query("  ", EMB)


def test_sole_candidate_anchor(tmp_path):
    g = byd_graph()
    index = VectorIndex(EMB.dimension, tuple(r for r in encode_graph(g, EMB) if r.level == "graph"))
    anchors = coarse_retrieve(encode_query("anything at all", EMB), index, 3)
    assert [(a.stock, a.date) for a in anchors] == [("002594.SZ", None)]


def test_token_overlap_picks_named_stock(tmp_path):
    _, index = build(tmp_path, byd_graph(), acme_graph())
    anchors = coarse_retrieve(encode_query("BYD September report", EMB), index, 3)
    assert anchors[0].stock == "002594.SZ"


def test_coarse_k_and_ordering(tmp_path):
    graphs = [graph(f"T{i}", f"Stock{i}", attr(f"Stock{i}", "Target Price", f"{i} CNY")) for i in range(5)]
    _, index = build(tmp_path, *graphs)
    anchors = coarse_retrieve(encode_query("Stock3 target price", EMB), index, 2)
    assert len(anchors) == 2
    assert anchors[0].score >= anchors[1].score
    assert coarse_retrieve(encode_query("x", EMB), VectorIndex(EMB.dimension), 2) == []


def test_fine_scope_follows_anchor_date(tmp_path):
    _, index = build(tmp_path, byd_graph())
    q = encode_query("BYD industry market cap price", EMB)
    fine = fine_retrieve(q, [Anchor("002594.SZ", D1, 1.0)], index, 100)
    assert fine and {r.date for r, _ in fine} == {D1}
    assert {r.key for r, _ in fine} >= {"automobiles#industry", "800 cny billions#value", "Primary Industry"}
    assert fine_retrieve(q, [Anchor("NOPE", None, 1.0)], index, 5) == []
    assert len(fine_retrieve(q, [Anchor("002594.SZ", None, 1.0)], index, 1000)) == sum(
        1 for r in index.records if r.level != "graph")


def test_map_one_entity_in_two_triples(tmp_path):
    store, index = build(tmp_path, byd_graph())
    rec = next(r for r in index.records if r.key == "byd#stock" and r.date == D1)
    sub = map_to_subgraph([rec], store)
    assert len(sub) == 4  # every D1 triple has BYD as head
    rec = next(r for r in index.records if r.key == "automobiles#industry")
    assert len(map_to_subgraph([rec], store)) == 1
    assert map_to_subgraph([], store).triples == ()


def test_subgraph_contained_in_store(tmp_path):
    store, index = build(tmp_path, byd_graph(), acme_graph())
    sub, _ = retrieve("BYD overseas plant", index, store, EMB, 3, 20)
    assert len(sub) > 0
    assert all(store.contains(t, item) for t, item in sub.triples)


def test_two_stock_scoping(tmp_path):
    store, index = build(tmp_path, byd_graph(), acme_graph())
    sub, anchors = retrieve("Acme chemicals slowdown", index, store, EMB, 1, 20)
    assert {a.stock for a in anchors} == {"600000.SH"}
    assert sub.stocks() == {"600000.SH"}


def test_large_k_equals_brute_force(tmp_path):
    store, index = build(tmp_path, byd_graph(), acme_graph())
    q = "BYD Acme price"
    sub, _ = retrieve(q, index, store, EMB, 1000, 1000)
    _, _, want = brute_subgraph(index.records, {g.ticker: g for g in store.graphs()}, encode_query(q, EMB), None, None)
    assert set(sub.triples) == want


def test_staleness_guard(tmp_path):
    store, index = build(tmp_path, byd_graph())
    store.set_build_id("other")
    with pytest.raises(StalenessError):
        retrieve("BYD", index, store, EMB)


def test_as_of_hides_later_reports(tmp_path):
    store, index = build(tmp_path, byd_graph())
    sub, anchors = retrieve("BYD sales deliveries", index, store, EMB, 5, 50, as_of=D1)
    assert all(item.timestamp <= D1 for _, item in sub.triples)
    assert all(a.date is None or a.date <= D1 for a in anchors)


def test_determinism(tmp_path):
    store, index = build(tmp_path, byd_graph(), acme_graph())
    a = retrieve("BYD outlook", index, store, EMB)
    b = retrieve("BYD outlook", index, store, EMB)
    assert a[0].triples == b[0].triples and a[1] == b[1]


def test_subgraph_json_shape(tmp_path):
    store, index = build(tmp_path, byd_graph())
    sub, anchors = retrieve("BYD", index, store, EMB)
    out = sub.to_json(anchors)
    assert set(out) >= {"triples", "anchors", "scores"}
    assert len(out["triples"]) == len(sub)


def test_entity_serialization_query_hits_entity(tmp_path):
    _, index = build(tmp_path, byd_graph())
    from fingraph.graph import Entity

    text = entity_texts(byd_graph())[(Entity.of("BYD", "stock"), D2)]
    fine = fine_retrieve(encode_query(text, EMB), [Anchor("002594.SZ", None, 1.0)], index, 1)
    assert (fine[0][0].key, fine[0][0].date) == ("byd#stock", D2)
    assert fine[0][1] == pytest.approx(1.0, abs=1e-9)

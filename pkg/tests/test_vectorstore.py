from __future__ import annotations

import random
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from builders import D1, D2, attr, byd_graph, event, graph
from fingraph.errors import EmptyGraphError, PersistenceError
from fingraph.graph import Entity, Relation
from fingraph.providers import HashingEmbedder
from fingraph.vectorstore import (VectorIndex, VectorRecord, encode_graph, entity_texts, ingest, load_index,
                                  mips_search, save_index, serialize_entity, serialize_relation)

EMB = HashingEmbedder(64)


def unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def test_isolated_entity_serialization():
    assert serialize_entity(Entity.of("BYD", "stock"), [], []) == "BYD | stock | |"


def test_serialization_sorts_neighborhood():
    e = Entity.of("BYD", "stock")
    a = serialize_entity(e, ["Target Price", "Key Products"], ["cars", "350 CNY"])
    b = serialize_entity(e, ["Key Products", "Target Price"], ["350 CNY", "cars"])
    assert a == b == "BYD | stock | Key Products, Target Price | 350 CNY, cars"


def test_relation_serialization():
    assert serialize_relation(Relation("Macro", "event-trigger", "Macro")) == "Macro | event-trigger | Macro"
    assert serialize_relation(Relation("Target Price", "attribute")) == "Target Price | attribute |"


def test_record_counts():
    g = graph("T", "BYD", attr("BYD", "Primary Industry", "Automobiles"), attr("BYD", "Key Products", "cars"))
    recs = encode_graph(g, EMB)
    assert len(recs) == 3 + 2 + 1
    assert [r.level for r in recs].count("graph") == 1


def test_records_per_report_date():
    g = graph("T", "BYD", attr("BYD", "Target Price", "1 CNY", D1), attr("BYD", "Target Price", "2 CNY", D2))
    recs = encode_graph(g, EMB)
    assert {(r.key, r.date) for r in recs if r.level == "entity" and r.key == "byd#stock"} == {("byd#stock", D1),
                                                                                             ("byd#stock", D2)}


def test_single_entity_graph_readout_equals_entity():
    recs = encode_graph(graph("T", "BYD", attr("BYD", "Target Price", "")), EMB)
    ent = [r for r in recs if r.level == "entity"]
    (glob,) = [r for r in recs if r.level == "graph"]
    assert len(ent) == 1
    np.testing.assert_allclose(glob.vector, ent[0].vector, atol=1e-12)


def test_empty_graph_is_error():
    with pytest.raises(EmptyGraphError):
        encode_graph(graph("T", "BYD"), EMB)


def test_record_invariants():
    for r in encode_graph(byd_graph(), EMB):
        assert abs(np.linalg.norm(r.vector) - 1.0) < 1e-9
        assert r.stock == "002594.SZ"
        assert (r.date is None) == (r.level == "graph")


def test_graph_vector_ignores_insertion_order():
    items = list(byd_graph().items())
    rnd = random.Random(7)
    shuffled = items[:]
    rnd.shuffle(shuffled)
    a = encode_graph(graph("002594.SZ", "BYD", *items), EMB)[-1]
    b = encode_graph(graph("002594.SZ", "BYD", *shuffled), EMB)[-1]
    assert np.array_equal(a.vector, b.vector)


def test_entity_text_matches_query_embedding():
    g = byd_graph()
    text = entity_texts(g)[(Entity.of("BYD", "stock"), D1)]
    (q,) = EMB.embed([text])
    rec = next(r for r in encode_graph(g, EMB) if r.key == "byd#stock" and r.date == D1)
    assert float(rec.vector @ q) == pytest.approx(1.0, abs=1e-9)


def test_ingest_sizes_and_replacement():
    recs = encode_graph(byd_graph(), EMB)
    idx = ingest(VectorIndex(64), recs)
    assert len(idx) == len(recs)
    assert len(ingest(idx, recs)) == len(recs)


def test_ingest_wrong_dimension():
    bad = VectorRecord("x", "entity", unit([1, 0]), "x", "T", D1)
    with pytest.raises(ValueError):
        ingest(VectorIndex(64), [bad])


def test_record_norm_checked():
    with pytest.raises(ValueError):
        VectorRecord("x", "entity", np.array([1.0, 1.0]), "x", "T", D1)


def test_self_match_first():
    idx = ingest(VectorIndex(64), encode_graph(byd_graph(), EMB))
    target = idx.records[3]
    (top, score), *_ = mips_search(idx, target.vector, 1)
    assert top.identity == target.identity and score == pytest.approx(1.0, abs=1e-9)


def test_k_larger_than_index():
    idx = ingest(VectorIndex(64), encode_graph(byd_graph(), EMB))
    assert len(mips_search(idx, idx.records[0].vector, 10_000)) == len(idx)


def test_filter_and_validation():
    idx = ingest(VectorIndex(64), encode_graph(byd_graph(), EMB))
    q = idx.records[0].vector
    got = mips_search(idx, q, 50, filter=lambda level, stock, when: level == "relation")
    assert got and all(r.level == "relation" for r, _ in got)
    with pytest.raises(ValueError):
        mips_search(idx, q * 2, 1)
    with pytest.raises(ValueError):
        mips_search(idx, q, 0)
    assert mips_search(VectorIndex(64), q, 3) == []


def random_index(rng: np.random.Generator, n: int, dim: int, dup_every: int = 0) -> VectorIndex:
    recs = []
    for i in range(n):
        if dup_every and i % dup_every == 0 and recs:
            vec = recs[int(rng.integers(len(recs)))].vector
        else:
            vec = unit(rng.normal(size=dim))
        recs.append(VectorRecord(f"k{int(rng.integers(0, n // 2 + 1)):04d}", "entity", vec, "",
                                 f"S{i % 7}", date(2024, 1, 1 + i % 28)))
    return ingest(VectorIndex(dim), recs)


def brute_force(index: VectorIndex, q: np.ndarray, k: int):
    scored = [(float(np.dot(r.vector, q)), r) for r in index.records]
    scored.sort(key=lambda p: (-p[0], p[1].key, p[1].stock or "", p[1].date.isoformat() if p[1].date else ""))
    return scored[:k]


def test_mips_matches_brute_force_on_200_records():
    rng = np.random.default_rng(1)
    idx = random_index(rng, 200, 32, dup_every=9)
    for _ in range(50):
        q = unit(rng.normal(size=32))
        got = mips_search(idx, q, 20)
        want = brute_force(idx, q, 20)
        assert [r.identity for r, _ in got] == [r.identity for _, r in want]
        np.testing.assert_allclose([s for _, s in got], [s for s, _ in want], atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 40))
def test_mips_prefix_monotonic_and_bounded(seed, k):
    rng = np.random.default_rng(seed)
    idx = random_index(rng, 60, 16, dup_every=5)
    q = unit(rng.normal(size=16))
    small, big = mips_search(idx, q, k), mips_search(idx, q, k + 1)
    assert [r.identity for r, _ in small] == [r.identity for r, _ in big[:len(small)]]
    assert all(-1 - 1e-9 <= s <= 1 + 1e-9 for _, s in big)
    assert mips_search(idx, q, k) == small


def test_index_persistence_round_trip(tmp_path):
    idx = ingest(VectorIndex(64, build_id="abc123"), encode_graph(byd_graph(), EMB))
    save_index(idx, tmp_path / "i.bin")
    back = load_index(tmp_path / "i.bin")
    assert back.build_id == "abc123" and back.dimension == 64
    assert [r.identity for r in back.records] == [r.identity for r in idx.records]
    for a, b in zip(back.records, idx.records):
        np.testing.assert_allclose(a.vector, b.vector, atol=1e-6)
        assert abs(np.linalg.norm(a.vector) - 1.0) < 1e-9
    save_index(back, tmp_path / "j.bin")
    assert (tmp_path / "j.bin").read_bytes() == (tmp_path / "i.bin").read_bytes()


def test_index_header_layout(tmp_path):
    idx = ingest(VectorIndex(8), [VectorRecord("a", "entity", unit(range(1, 9)), "a", "T", D1)])
    save_index(idx, tmp_path / "i.bin")
    raw = (tmp_path / "i.bin").read_bytes()
    assert raw[:4] == b"FGVI"
    assert len(raw) == 4 + 4 * 3 + 64 + 8 * 4
    np.testing.assert_allclose(np.frombuffer(raw[-32:], dtype="<f4"), unit(range(1, 9)), atol=1e-7)


def test_truncated_index_is_persistence_error(tmp_path):
    idx = ingest(VectorIndex(64), encode_graph(byd_graph(), EMB))
    save_index(idx, tmp_path / "i.bin")
    (tmp_path / "i.bin").write_bytes((tmp_path / "i.bin").read_bytes()[:-4])
    with pytest.raises(PersistenceError):
        load_index(tmp_path / "i.bin")

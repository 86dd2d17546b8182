from __future__ import annotations

import hashlib
import re
from datetime import date
from decimal import Decimal

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fingraph.errors import ConfigError, NotFoundError, ProviderProtocolError, TransportError
from fingraph.providers import (ChatRequest, CsvReferenceSource, HashingEmbedder, HttpChat, HttpEmbedder,
                                ReferenceLookup, ReferenceValue, ScriptedChat, prompt_key)


def test_scripted_chat_echoes_fixture():
    chat = ScriptedChat({prompt_key("p"): "OK"})
    assert chat.complete(ChatRequest("p")) == "OK"


def test_scripted_chat_is_deterministic():
    chat = ScriptedChat.from_prompts({"what is up": "the stock"})
    assert chat.complete(ChatRequest("what is up")) == chat.complete(ChatRequest("what is up"))


def test_scripted_chat_missing_fixture_is_protocol_error():
    chat = ScriptedChat({prompt_key("known"): "yes"})
    with pytest.raises(ProviderProtocolError):
        chat.complete(ChatRequest("unknown"))


def test_scripted_chat_empty_reply_is_protocol_error():
    with pytest.raises(ProviderProtocolError):
        ScriptedChat.from_prompts({"p": ""}).complete(ChatRequest("p"))


def test_scripted_chat_responder_fallback():
    chat = ScriptedChat(responder=lambda req: req.user_text.upper())
    assert chat.complete(ChatRequest("abc")) == "ABC"


def test_chat_request_rejects_empty_text():
    with pytest.raises(ValueError):
        ChatRequest("")


def _mock_client(handler) -> httpx.Client:
    return httpx.Client(transport=httpx.MockTransport(handler))


def test_http_chat_parses_openai_shape():
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    chat = HttpChat("http://chat.test/v1", "k", client=_mock_client(handler))
    assert chat.complete(ChatRequest("hi", system_text="sys")) == "hello"
    assert seen["auth"] == "Bearer k"


def test_http_chat_retries_with_exponential_backoff():
    calls, sleeps = [], []

    def handler(request):
        calls.append(1)
        return httpx.Response(503)

    chat = HttpChat("http://chat.test/v1", "k", client=_mock_client(handler), sleep=sleeps.append)
    with pytest.raises(TransportError) as info:
        chat.complete(ChatRequest("hi"))
    assert info.value.attempts == 3
    assert len(calls) == 3
    assert sleeps == [1.0, 2.0]


def test_http_chat_recovers_after_transient_failure():
    replies = iter([httpx.Response(500), httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})])
    chat = HttpChat("http://chat.test/v1", "k", client=_mock_client(lambda r: next(replies)), sleep=lambda s: None)
    assert chat.complete(ChatRequest("hi")) == "ok"


def test_http_chat_empty_content_is_protocol_error():
    chat = HttpChat("http://x", "k", client=_mock_client(
        lambda r: httpx.Response(200, json={"choices": [{"message": {"content": ""}}]})))
    with pytest.raises(ProviderProtocolError):
        chat.complete(ChatRequest("hi"))


def test_http_providers_need_credentials():
    with pytest.raises(ConfigError):
        HttpChat.from_env({})
    with pytest.raises(ConfigError):
        HttpEmbedder.from_env(env={"FINKARIO_EMBED_URL": "http://x"})


def test_http_embedder_normalizes_vectors():
    def handler(request):
        return httpx.Response(200, json={"data": [{"index": 1, "embedding": [0.0, 2.0]},
                                                  {"index": 0, "embedding": [3.0, 4.0]}]})

    emb = HttpEmbedder("http://e", "k", dimension=2, client=_mock_client(handler))
    a, b = emb.embed(["x", "y"])
    np.testing.assert_allclose(a, [0.6, 0.8])
    np.testing.assert_allclose(b, [0.0, 1.0])


def _reference_hash_vector(text: str, dim: int) -> np.ndarray:
    """Independent re-derivation of the signed feature-hashing embedding."""
    vec = np.zeros(dim)
    for tok in re.findall(r"\w+", text.casefold()):
        d = hashlib.blake2b(tok.encode(), digest_size=16).digest()
        vec[int.from_bytes(d[:8], "little") % dim] += 1.0 if d[8] & 1 else -1.0
    return vec / np.linalg.norm(vec)


@pytest.mark.parametrize("text", ["BYD overseas expansion", "Kweichow Moutai | stock | Target Price | 1,650 CNY"])
def test_hashing_embedder_matches_reference_derivation(text):
    np.testing.assert_allclose(HashingEmbedder(64).embed([text])[0], _reference_hash_vector(text, 64), atol=1e-12)


def test_hashing_embedder_is_deterministic_and_unit():
    emb = HashingEmbedder()
    (a,), (b,) = emb.embed(["a"]), emb.embed(["a"])
    assert np.array_equal(a, b)
    assert abs(np.linalg.norm(a) - 1.0) < 1e-9
    assert a.shape == (256,)


def test_unrelated_texts_are_not_parallel():
    a, b = HashingEmbedder().embed(["power battery capacity", "liquor wholesale price"])
    assert float(a @ b) < 1.0


def test_hashing_embedder_rejects_empty_input():
    with pytest.raises(ValueError):
        HashingEmbedder().embed([])
    with pytest.raises(ValueError):
        HashingEmbedder().embed([""])


@settings(max_examples=200, deadline=None)
@given(st.text(min_size=1, max_size=60), st.integers(min_value=1, max_value=512))
def test_hashing_vectors_are_unit_norm(text, dim):
    (v,) = HashingEmbedder(dim).embed([text])
    assert abs(float(np.linalg.norm(v)) - 1.0) < 1e-9


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from(["byd", "battery", "sales", "hungary", "plant", "export"]), min_size=1, max_size=8))
def test_hashing_embedder_ignores_token_order(tokens):
    emb = HashingEmbedder(128)
    a, b = emb.embed([" ".join(tokens), " ".join(reversed(tokens))])
    np.testing.assert_allclose(a, b, atol=1e-12)


def _ref(value: str, unit: str, day: date) -> ReferenceValue:
    return ReferenceValue(Decimal(value), unit, day)


def test_reference_lookup_picks_latest_row_on_or_before_date():
    src = CsvReferenceSource([("002594.SZ", "Market Capitalization", _ref("800", "CNY billions", date(2024, 9, 1)))])
    got = src.lookup(ReferenceLookup("002594.SZ", "Market Capitalization", date(2024, 9, 2)))
    assert (got.value, got.unit) == (Decimal("800"), "CNY billions")
    assert got.render() == "800 CNY billions"


def test_reference_lookup_ignores_rows_after_as_of():
    src = CsvReferenceSource([
        ("T", "Target Price", _ref("10", "CNY", date(2024, 1, 1))),
        ("T", "Target Price", _ref("12", "CNY", date(2024, 3, 1))),
    ])
    assert src.lookup(ReferenceLookup("T", "Target Price", date(2024, 2, 1))).value == Decimal("10")


def test_reference_lookup_empty_source_not_found():
    with pytest.raises(NotFoundError):
        CsvReferenceSource().lookup(ReferenceLookup("T", "Target Price", date(2024, 2, 1)))


def test_reference_rows_need_a_unit():
    with pytest.raises(ValueError):
        CsvReferenceSource([("T", "Target Price", _ref("10", " ", date(2024, 1, 1)))])


def test_reference_csv_round_trip(tmp_path):
    path = tmp_path / "ref.csv"
    path.write_text("ticker,field,value,unit,as_of\n002594.SZ,Current Stock Price,250.5,CNY,2024-09-01\n")
    src = CsvReferenceSource.from_env({"FINKARIO_REFDATA_PATH": str(path)})
    assert src.lookup(ReferenceLookup("002594.SZ", "Current Stock Price", date(2024, 9, 9))).render() == "250.5 CNY"

"""Chat, embedding, and reference-data providers.

Each capability has a network-backed implementation configured from
``FINKARIO_*`` environment variables and a deterministic offline one, so the
whole pipeline runs without network access.
"""

from __future__ import annotations

import csv
import hashlib
import logging
import os
import re
import time
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .errors import ConfigError, NotFoundError, ProviderProtocolError, TransportError

logger = logging.getLogger(__name__)

DEFAULT_DIMENSION = 256

ENV_CHAT_URL = "FINKARIO_CHAT_URL"
ENV_CHAT_KEY = "FINKARIO_CHAT_KEY"
ENV_EMBED_URL = "FINKARIO_EMBED_URL"
ENV_EMBED_KEY = "FINKARIO_EMBED_KEY"
ENV_REFDATA_PATH = "FINKARIO_REFDATA_PATH"


@dataclass(frozen=True)
class ChatRequest:
    user_text: str
    system_text: str = ""
    max_reply_chars: int = 4000

    def __post_init__(self) -> None:
        if not self.user_text:
            raise ValueError("user_text must be non-empty")
        if self.max_reply_chars <= 0:
            raise ValueError("max_reply_chars must be positive")


@dataclass(frozen=True)
class ReferenceLookup:
    ticker: str
    field_name: str
    as_of: date


@dataclass(frozen=True)
class ReferenceValue:
    value: Decimal
    unit: str
    as_of: date

    def render(self) -> str:
        return f"{self.value} {self.unit}"


class ChatProvider(Protocol):
    def complete(self, req: ChatRequest) -> str: ...


class Embedder(Protocol):
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class ReferenceSource(Protocol):
    def lookup(self, q: ReferenceLookup) -> ReferenceValue: ...


def prompt_key(user_text: str) -> str:
    """Fixture key for a prompt: hex SHA-256 of its UTF-8 bytes."""
    return hashlib.sha256(user_text.encode("utf-8")).hexdigest()


class ScriptedChat:
    """Offline chat provider replaying canned replies.

    Replies are looked up by ``prompt_key(user_text)``. An optional
    ``responder`` callable answers prompts that have no fixture entry.
    """

    def __init__(
        self,
        fixtures: Mapping[str, str] | None = None,
        responder: Callable[[ChatRequest], str] | None = None,
    ):
        self._fixtures = dict(fixtures or {})
        self._responder = responder

    @classmethod
    def from_prompts(cls, pairs: Mapping[str, str], **kwargs) -> "ScriptedChat":
        return cls({prompt_key(p): r for p, r in pairs.items()}, **kwargs)

    def complete(self, req: ChatRequest) -> str:
        key = prompt_key(req.user_text)
        if key in self._fixtures:
            reply = self._fixtures[key]
        elif self._responder is not None:
            reply = self._responder(req)
        else:
            raise ProviderProtocolError(f"no scripted reply for prompt {key[:12]}")
        if not reply:
            raise ProviderProtocolError("empty reply")
        return reply[: req.max_reply_chars]


class HttpChat:
    """OpenAI-compatible chat-completions client with bounded retries."""

    def __init__(
        self,
        url: str,
        key: str,
        model: str = "gpt-4o-mini",
        attempts: int = 3,
        backoff: float = 1.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.url = url
        self.key = key
        self.model = model
        self.attempts = attempts
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=60.0)
        self._sleep = sleep

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kwargs) -> "HttpChat":
        env = os.environ if env is None else env
        url, key = env.get(ENV_CHAT_URL), env.get(ENV_CHAT_KEY)
        if not url or not key:
            raise ConfigError(f"{ENV_CHAT_URL} and {ENV_CHAT_KEY} must be set for the http chat provider")
        return cls(url, key, **kwargs)

    def complete(self, req: ChatRequest) -> str:
        messages = []
        if req.system_text:
            messages.append({"role": "system", "content": req.system_text})
        messages.append({"role": "user", "content": req.user_text})
        body = {"model": self.model, "messages": messages, "temperature": 0}
        headers = {"Authorization": f"Bearer {self.key}"}

        last_error: Exception | None = None
        for attempt in range(1, self.attempts + 1):
            try:
                resp = self._client.post(self.url, json=body, headers=headers)
                resp.raise_for_status()
                payload = resp.json()
                break
            except (httpx.HTTPError, ValueError) as exc:
                last_error = exc
                logger.warning("chat attempt %d/%d failed: %s", attempt, self.attempts, exc)
                if attempt < self.attempts:
                    self._sleep(self.backoff * 2 ** (attempt - 1))
        else:
            raise TransportError(f"chat request failed: {last_error}", attempts=self.attempts)

        try:
            reply = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderProtocolError(f"malformed chat response: {exc}") from exc
        if not reply:
            raise ProviderProtocolError("empty reply")
        return reply[: req.max_reply_chars]


_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.casefold())


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return vec / norm


class HashingEmbedder:
    """Signed feature-hashing bag-of-tokens embedder.

    Each token lands in bucket ``h1(token) % dimension`` with sign from a
    second hash. The result is a pure function of (text, dimension).
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        if dimension <= 0:
            raise ValueError("dimension must be positive")
        self.dimension = dimension

    def _vector(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dimension, dtype=np.float64)
        tokens = tokenize(text) or [text]
        for token in tokens:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=16).digest()
            bucket = int.from_bytes(digest[:8], "little") % self.dimension
            sign = 1.0 if digest[8] & 1 else -1.0
            vec[bucket] += sign
        if not vec.any():
            # Hash collisions cancelled every token; fall back to the whole text.
            digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
            vec[int.from_bytes(digest, "little") % self.dimension] = 1.0
        return _unit(vec)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        if any(not t for t in texts):
            raise ValueError("every text must be non-empty")
        return [self._vector(t) for t in texts]


class HttpEmbedder:
    """OpenAI-compatible embeddings client; vectors are L2-normalized on receipt."""

    def __init__(self, url: str, key: str, dimension: int = DEFAULT_DIMENSION,
                 model: str = "text-embedding-3-small", client: httpx.Client | None = None):
        self.url = url
        self.key = key
        self.dimension = dimension
        self.model = model
        self._client = client or httpx.Client(timeout=60.0)

    @classmethod
    def from_env(cls, dimension: int = DEFAULT_DIMENSION, env: Mapping[str, str] | None = None,
                 **kwargs) -> "HttpEmbedder":
        env = os.environ if env is None else env
        url, key = env.get(ENV_EMBED_URL), env.get(ENV_EMBED_KEY)
        if not url or not key:
            raise ConfigError(f"{ENV_EMBED_URL} and {ENV_EMBED_KEY} must be set for the http embedder")
        return cls(url, key, dimension=dimension, **kwargs)

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        if not texts:
            raise ValueError("texts must be non-empty")
        body = {"model": self.model, "input": list(texts), "dimensions": self.dimension}
        try:
            resp = self._client.post(self.url, json=body, headers={"Authorization": f"Bearer {self.key}"})
            resp.raise_for_status()
            rows = resp.json()["data"]
        except httpx.HTTPError as exc:
            raise TransportError(f"embedding request failed: {exc}", attempts=1) from exc
        except (KeyError, ValueError) as exc:
            raise ProviderProtocolError(f"malformed embedding response: {exc}") from exc
        out = []
        for row in sorted(rows, key=lambda r: r.get("index", 0)):
            vec = np.asarray(row["embedding"], dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise ProviderProtocolError(f"expected dimension {self.dimension}, got {vec.shape}")
            out.append(_unit(vec))
        if len(out) != len(texts):
            raise ProviderProtocolError("embedding count does not match input count")
        return out


class CsvReferenceSource:
    """Reference values from a CSV with header ``ticker,field,value,unit,as_of``."""

    def __init__(self, rows: Iterable[tuple[str, str, ReferenceValue]] = ()):
        table: dict[tuple[str, str], list[ReferenceValue]] = {}
        for ticker, field_name, ref in rows:
            if not ref.unit.strip():
                raise ValueError(f"reference row {ticker}/{field_name} has an empty unit")
            table.setdefault((ticker, field_name), []).append(ref)
        for values in table.values():
            values.sort(key=lambda r: r.as_of)
        self._table = table

    @classmethod
    def from_csv(cls, path: str | Path) -> "CsvReferenceSource":
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            for line_no, rec in enumerate(csv.DictReader(fh), start=2):
                try:
                    ref = ReferenceValue(Decimal(rec["value"].strip()), rec["unit"].strip(),
                                         date.fromisoformat(rec["as_of"].strip()))
                except (KeyError, InvalidOperation, ValueError, AttributeError) as exc:
                    raise ValueError(f"{path}:{line_no}: bad reference row: {exc}") from exc
                rows.append((rec["ticker"].strip(), rec["field"].strip(), ref))
        return cls(rows)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "CsvReferenceSource":
        env = os.environ if env is None else env
        path = env.get(ENV_REFDATA_PATH)
        return cls.from_csv(path) if path else cls()

    def lookup(self, q: ReferenceLookup) -> ReferenceValue:
        candidates = [r for r in self._table.get((q.ticker, q.field_name), []) if r.as_of <= q.as_of]
        if not candidates:
            raise NotFoundError(f"no reference value for {q.ticker}/{q.field_name} as of {q.as_of}")
        return candidates[-1]

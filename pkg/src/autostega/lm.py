"""Next-token distribution providers.

The builtin provider is an additive-smoothed n-gram model over whitespace
tokens.  It is deterministic and fast enough for property tests, and any
other provider (a remote model server, a synthetic table) only needs to
expose ``vocab`` and ``next_token_distribution``.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from collections import Counter, defaultdict
from collections.abc import Callable, Iterator, Sequence
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Protocol, runtime_checkable

import httpx
import numpy as np

from .errors import ConfigError, DataError, TransportError
from .hashing import FNV_OFFSET, context_hash, extend_context_hash

logger = logging.getLogger(__name__)

MODEL_FORMAT = "autostega-ngram"
MODEL_VERSION = 1
UNK = "<unk>"


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]
    unk_id: int | None = None
    _index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ConfigError("vocabulary tokens must be unique")
        if any(not tok or tok.split() != [tok] for tok in self.tokens):
            raise ConfigError("vocabulary tokens must be non-empty and whitespace-free")
        if self.unk_id is not None and not 0 <= self.unk_id < len(self.tokens):
            raise ConfigError("unk_id out of range")
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            if self.unk_id is not None:
                return self.unk_id
            raise DataError(f"token {token!r} not in vocabulary") from None

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.id(t) for t in tokens]

    def tokenize(self, text: str) -> list[int]:
        return [self.id(t) for t in text.split()]

    def detokenize(self, ids: Sequence[int]) -> str:
        try:
            return " ".join(self.tokens[i] for i in ids)
        except (IndexError, TypeError):
            raise DataError("token id outside vocabulary") from None

    def check_ids(self, ids: Sequence[int]) -> None:
        n = len(self.tokens)
        for i in ids:
            if not (isinstance(i, (int, np.integer)) and 0 <= i < n):
                raise DataError(f"unknown token id {i!r}")


class TokenContext(Sequence[int]):
    """Token ids with an incrementally maintained rolling hash."""

    def __init__(self, ids: Sequence[int] = ()) -> None:
        self._ids = list(ids)
        self.hash = context_hash(self._ids)

    def push(self, token_id: int) -> None:
        self._ids.append(token_id)
        self.hash = extend_context_hash(self.hash, token_id)

    def __getitem__(self, item):  # type: ignore[override]
        return self._ids[item]

    def __len__(self) -> int:
        return len(self._ids)

    def __iter__(self) -> Iterator[int]:
        return iter(self._ids)


class TokenDistribution:
    """Conditional next-token distribution over a dense vocabulary."""

    def __init__(self, probs: np.ndarray, context_hash: int = FNV_OFFSET) -> None:
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DataError("probabilities must be a non-empty vector")
        if probs.flags.writeable:
            probs = probs.copy()
            probs.flags.writeable = False
        self.probs = probs
        self.context_hash = context_hash

    def __len__(self) -> int:
        return self.probs.size

    @cached_property
    def entropy_bits(self) -> float:
        p = self.probs[self.probs > 0]
        return float(-np.sum(p * np.log2(p)))

    @cached_property
    def canonical_order(self) -> np.ndarray:
        """Token ids sorted by probability descending, id ascending."""
        # stable sort on the negated probabilities keeps equal entries in id order
        order = np.argsort(-self.probs, kind="stable")
        order.flags.writeable = False
        return order

    @cached_property
    def sorted_cumsum(self) -> np.ndarray:
        """Cumulative mass along :attr:`canonical_order`."""
        cum = np.cumsum(self.probs[self.canonical_order])
        cum.flags.writeable = False
        return cum

    def with_context_hash(self, context_hash: int) -> TokenDistribution:
        """Same probabilities (and cached derived arrays) under another context hash."""
        other = TokenDistribution(self.probs, context_hash)
        for name in ("canonical_order", "sorted_cumsum", "entropy_bits"):
            if name in self.__dict__:
                other.__dict__[name] = self.__dict__[name]
        return other

    def as_dict(self) -> dict[int, float]:
        return {i: float(p) for i, p in enumerate(self.probs)}

    def validate(self, tol: float = 1e-9) -> None:
        if not np.all(np.isfinite(self.probs)) or np.any(self.probs < 0):
            raise DataError("probabilities must be finite and non-negative")
        total = float(np.sum(self.probs))
        if abs(total - 1.0) > tol:
            raise DataError(f"probabilities sum to {total!r}")


@runtime_checkable
class LanguageModel(Protocol):
    vocab: Vocabulary

    def next_token_distribution(self, context: Sequence[int]) -> TokenDistribution: ...


def _hash_of(context: Sequence[int]) -> int:
    h = getattr(context, "hash", None)
    return h if h is not None else context_hash(context)


class UniformModel:
    """Every context maps to the uniform distribution."""

    def __init__(self, vocab: Vocabulary) -> None:
        self.vocab = vocab
        self._base = TokenDistribution(np.full(len(vocab), 1.0 / len(vocab)))

    def next_token_distribution(self, context: Sequence[int]) -> TokenDistribution:
        # earlier tokens were validated when they were appended
        self.vocab.check_ids(context[-1:])
        return self._base.with_context_hash(_hash_of(context))


class NgramModel:
    """Additive-smoothed n-gram model; ``order`` is the context length."""

    def __init__(
        self,
        vocab: Vocabulary,
        order: int,
        alpha: float,
        counts: dict[tuple[int, ...], dict[int, int]],
    ) -> None:
        if not 1 <= order <= 4:
            raise ConfigError(f"order must be in [1, 4], got {order}")
        if not (alpha > 0 and math.isfinite(alpha)):
            raise ConfigError(f"alpha must be > 0, got {alpha}")
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        self.counts = counts
        self._table: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray, int]] = {}
        for ctx, followers in counts.items():
            ids = np.fromiter(sorted(followers), dtype=np.int64)
            cnt = np.array([followers[int(i)] for i in ids], dtype=np.float64)
            self._table[ctx] = (ids, cnt, int(cnt.sum()))
        self._uniform = np.full(len(vocab), 1.0 / len(vocab))
        self._uniform.flags.writeable = False
        self._cached = lru_cache(maxsize=65536)(self._compute)

    def _compute(self, key: tuple[int, ...]) -> TokenDistribution:
        entry = self._table.get(key)
        if entry is None:
            dist = TokenDistribution(self._uniform)
        else:
            ids, cnt, total = entry
            denom = total + self.alpha * len(self.vocab)
            probs = np.full(len(self.vocab), self.alpha / denom)
            probs[ids] = (cnt + self.alpha) / denom
            dist = TokenDistribution(probs)
        # pay for sorting once per distinct n-gram context
        dist.sorted_cumsum  # noqa: B018
        dist.entropy_bits  # noqa: B018
        return dist

    def next_token_distribution(self, context: Sequence[int]) -> TokenDistribution:
        tail = context[-self.order :] if len(context) >= self.order else None
        if tail is not None:
            self.vocab.check_ids(tail)
            key = tuple(int(i) for i in tail)
        else:
            self.vocab.check_ids(context)
            key = ()
        return self._cached(key).with_context_hash(_hash_of(context))

    def probability(self, token_id: int, context: Sequence[int]) -> float:
        return float(self.next_token_distribution(context).probs[token_id])

    # -- artifact I/O ---------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "order": self.order,
            "alpha": self.alpha,
            "vocab": list(self.vocab.tokens),
            "unk_id": self.vocab.unk_id,
            "counts": [
                [list(ctx), [[tok, self.counts[ctx][tok]] for tok in sorted(self.counts[ctx])]]
                for ctx in sorted(self.counts)
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")), encoding="utf-8")

    @classmethod
    def from_json(cls, doc: dict) -> NgramModel:
        if doc.get("format") != MODEL_FORMAT:
            raise ConfigError("not an n-gram model artifact")
        if doc.get("version") != MODEL_VERSION:
            raise ConfigError(f"unsupported model artifact version {doc.get('version')!r}")
        vocab = Vocabulary(tuple(doc["vocab"]), doc.get("unk_id"))
        counts = {
            tuple(ctx): {int(tok): int(c) for tok, c in followers}
            for ctx, followers in doc["counts"]
        }
        return cls(vocab, int(doc["order"]), float(doc["alpha"]), counts)

    @classmethod
    def load(cls, path: str | Path) -> NgramModel:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"model artifact not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model artifact {path} is not valid JSON: {exc}") from None
        return cls.from_json(doc)


def train_ngram(corpus: str, order: int, alpha: float, unk: bool = False) -> NgramModel:
    """Count ``order``-token contexts over the whitespace tokens of ``corpus``.

    The vocabulary lists corpus tokens in first-appearance order; with
    ``unk`` an ``<unk>`` token is appended and absorbs out-of-vocabulary
    words at tokenization time.
    """
    words = corpus.split()
    if not words:
        raise ConfigError("corpus is empty")
    if not 1 <= order <= 4:
        raise ConfigError(f"order must be in [1, 4], got {order}")
    if not alpha > 0:
        raise ConfigError(f"alpha must be > 0, got {alpha}")
    tokens = list(dict.fromkeys(words))
    unk_id = None
    if unk:
        if UNK not in tokens:
            tokens.append(UNK)
        unk_id = tokens.index(UNK)
    vocab = Vocabulary(tuple(tokens), unk_id)
    ids = vocab.ids(words)
    counts: dict[tuple[int, ...], Counter] = defaultdict(Counter)
    for i in range(order, len(ids)):
        counts[tuple(ids[i - order : i])][ids[i]] += 1
    return NgramModel(vocab, order, alpha, {k: dict(v) for k, v in counts.items()})


class RemoteModel:
    """Adapter for an HTTP server returning full-vocabulary probabilities.

    Request body ``{"context_ids": [...], "model_name": str}``; response
    ``{"probs": [V floats]}``.  Truncated (top-k) responses are refused:
    both parties must see the identical full distribution.
    """

    def __init__(
        self,
        url: str,
        vocab: Vocabulary,
        model_name: str,
        *,
        top_k: int | None = None,
        retries: int = 3,
        backoff: float = 0.5,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        if top_k is not None and top_k < len(vocab):
            raise ConfigError(
                f"top_k={top_k} < vocabulary size {len(vocab)}: truncated distributions "
                "cannot guarantee mirror decoding"
            )
        if retries < 1:
            raise ConfigError("retries must be >= 1")
        self.url = url
        self.vocab = vocab
        self.model_name = model_name
        self.retries = retries
        self.backoff = backoff
        self._client = client or httpx.Client(timeout=timeout)
        self._sleep = sleep
        self._lock = threading.Lock()
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def _fetch(self, ids: tuple[int, ...]) -> np.ndarray:
        body = {"context_ids": list(ids), "model_name": self.model_name}
        status = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = self._client.post(self.url, json=body)
                status = resp.status_code
                if resp.status_code < 500:
                    resp.raise_for_status()
                    return self._parse(resp.json())
                logger.warning("LM server returned %s (attempt %d)", status, attempt)
            except httpx.TransportError as exc:
                logger.warning("LM server unreachable: %s (attempt %d)", exc, attempt)
            except httpx.HTTPStatusError as exc:
                raise TransportError(f"LM server rejected request: {exc}", attempt, status) from exc
            if attempt < self.retries:
                self._sleep(self.backoff * 2 ** (attempt - 1))
        raise TransportError("LM server failed", self.retries, status)

    def _parse(self, doc: object) -> np.ndarray:
        if not isinstance(doc, dict) or "probs" not in doc:
            raise TransportError("LM response lacks 'probs'")
        probs = np.asarray(doc["probs"], dtype=np.float64)
        if probs.shape != (len(self.vocab),):
            raise TransportError(
                f"LM response has {probs.size} probabilities, vocabulary has {len(self.vocab)}"
            )
        if not np.all(np.isfinite(probs)) or np.any(probs < 0):
            raise TransportError("LM response has invalid probabilities")
        total = probs.sum()
        if not abs(total - 1.0) < 1e-6:
            raise TransportError(f"LM response probabilities sum to {total}")
        probs = probs / total
        probs.flags.writeable = False
        return probs

    def next_token_distribution(self, context: Sequence[int]) -> TokenDistribution:
        self.vocab.check_ids(context)
        ids = tuple(int(i) for i in context)
        with self._lock:
            probs = self._cache.get(ids)
            if probs is None:
                probs = self._fetch(ids)
                self._cache[ids] = probs
        return TokenDistribution(probs, _hash_of(context))

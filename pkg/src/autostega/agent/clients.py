"""LLM role clients: a scripted mock for hermetic runs and an HTTP client."""

from __future__ import annotations

import json
import logging
import os
import threading
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import httpx

from ..errors import ConfigError, DataError, TransportError

logger = logging.getLogger(__name__)

ROLES = ("steganography", "scorer", "summarizer", "decoder")

Message = Mapping[str, str]


class ScenarioError(DataError):
    """A mock transcript ran out or does not match the calls being made."""


class LlmClient(Protocol):
    def complete(self, role: str, messages: Sequence[Message]) -> str: ...


@dataclass
class Turn:
    role: str
    response: str
    expect: tuple[str, ...] = ()
    reject: tuple[str, ...] = ()


class MockClient:
    """Replays role-tagged responses in order.

    Transcript: ``{"turns": [{"role": ..., "response": ..., "expect": [...],
    "reject": [...]}]}``.  ``expect``/``reject`` list substrings that the
    request must / must not contain.
    """

    def __init__(self, turns: Sequence[Turn]) -> None:
        self.turns = list(turns)
        self.position = 0
        self.calls: list[tuple[str, list[dict]]] = []
        self._lock = threading.Lock()

    @classmethod
    def from_json(cls, doc: Mapping | Sequence) -> MockClient:
        raw = doc["turns"] if isinstance(doc, Mapping) else doc
        turns = []
        for i, t in enumerate(raw):
            if t.get("role") not in ROLES or not isinstance(t.get("response"), str):
                raise ConfigError(f"transcript turn {i} needs a known role and a string response")
            turns.append(Turn(t["role"], t["response"], tuple(t.get("expect", ())), tuple(t.get("reject", ()))))
        return cls(turns)

    @classmethod
    def load(cls, path: str | Path) -> MockClient:
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"mock transcript not found: {path}") from None

    @property
    def exhausted(self) -> bool:
        return self.position >= len(self.turns)

    def complete(self, role: str, messages: Sequence[Message]) -> str:
        with self._lock:
            if self.exhausted:
                raise ScenarioError(f"transcript exhausted at call {self.position + 1} ({role})")
            turn = self.turns[self.position]
            if turn.role != role:
                raise ScenarioError(f"turn {self.position + 1}: expected a {turn.role} call, got {role}")
            request = "\n".join(m["content"] for m in messages)
            for needle in turn.expect:
                if needle not in request:
                    raise ScenarioError(f"turn {self.position + 1}: request lacks {needle!r}")
            for needle in turn.reject:
                if needle in request:
                    raise ScenarioError(f"turn {self.position + 1}: request contains {needle!r}")
            self.calls.append((role, [dict(m) for m in messages]))
            self.position += 1
            return turn.response


class HttpChatClient:
    """Chat-completions style endpoint: ``{model, temperature, messages}`` -> ``{text}``.

    OpenAI-shaped ``choices[0].message.content`` responses are accepted too.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        temperature: float = 0.7,
        api_key_env: str | None = None,
        timeout: float = 120.0,
        retries: int = 2,
        client: httpx.Client | None = None,
    ) -> None:
        self.endpoint = endpoint
        self.model = model
        self.temperature = temperature
        self.retries = retries
        headers = {}
        if api_key_env:
            key = os.environ.get(api_key_env)
            if not key:
                raise ConfigError(f"environment variable {api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self._client = client or httpx.Client(timeout=timeout)
        self._headers = headers
        self._lock = threading.Lock()

    def complete(self, role: str, messages: Sequence[Message]) -> str:
        body = {"model": self.model, "temperature": self.temperature, "messages": [dict(m) for m in messages]}
        status = None
        for attempt in range(1, self.retries + 1):
            try:
                with self._lock:
                    resp = self._client.post(self.endpoint, json=body, headers=self._headers)
                status = resp.status_code
                if resp.status_code >= 500:
                    logger.warning("%s endpoint returned %s (attempt %d)", role, status, attempt)
                    continue
                resp.raise_for_status()
                return _response_text(resp.json())
            except httpx.TransportError as exc:
                logger.warning("%s endpoint unreachable: %s (attempt %d)", role, exc, attempt)
            except (httpx.HTTPStatusError, ValueError, KeyError, IndexError, TypeError) as exc:
                raise TransportError(f"{role} endpoint error: {exc}", attempt, status) from exc
        raise TransportError(f"{role} endpoint failed", self.retries, status)


def _response_text(doc: Mapping) -> str:
    if "text" in doc:
        return str(doc["text"])
    return str(doc["choices"][0]["message"]["content"])


@dataclass
class RoleSet:
    clients: dict[str, LlmClient] = field(default_factory=dict)

    def __post_init__(self) -> None:
        unknown = set(self.clients) - set(ROLES)
        if unknown:
            raise ConfigError(f"unknown roles {sorted(unknown)}")

    @classmethod
    def shared(cls, client: LlmClient, roles: Sequence[str] = ROLES) -> RoleSet:
        return cls({r: client for r in roles})

    def has(self, role: str) -> bool:
        return role in self.clients

    def ask(self, role: str, prompt: str) -> str:
        if role not in self.clients:
            raise ConfigError(f"no client configured for the {role} role")
        return self.clients[role].complete(role, [{"role": "user", "content": prompt}])

    def chat(self, role: str, messages: Sequence[Message]) -> str:
        if role not in self.clients:
            raise ConfigError(f"no client configured for the {role} role")
        return self.clients[role].complete(role, messages)

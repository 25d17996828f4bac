"""Persisted strategy library with admission, dedup, retrieval and shortlisting."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Literal

import numpy as np

from .errors import DataError

logger = logging.getLogger(__name__)

LIBRARY_VERSION = 1
SUMMARY_KEYS = (
    "name",
    "definition",
    "technique",
    "applicable_scenarios",
    "characteristics",
    "examples",
)
EXAMPLE_KEYS = ("stego_excerpt", "overall_score", "scores")

Outcome = Literal["admitted", "rejected", "merged"]


class SchemaError(DataError):
    def __init__(self, problems: Sequence[str]) -> None:
        super().__init__("invalid strategy entry: " + "; ".join(problems))
        self.problems = list(problems)


class LibraryFormatError(DataError):
    def __init__(self, line: int, message: str) -> None:
        super().__init__(f"line {line}: {message}")
        self.line = line


class MigrationError(DataError):
    pass


def _is_number(x: object) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def normalize_name(name: str) -> str:
    return " ".join(name.lower().split())


def unit(vector: Sequence[float] | np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise DataError("retrieval key must be a finite non-zero vector")
    return v / n


@dataclass
class StrategyExample:
    stego_excerpt: str
    overall_score: float
    scores: dict[str, float] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"stego_excerpt": self.stego_excerpt, "overall_score": self.overall_score, "scores": dict(self.scores)}


@dataclass
class StrategyEntry:
    name: str
    definition: str
    technique: list[str]
    applicable_scenarios: list[str]
    characteristics: list[str]
    examples: list[StrategyExample]
    key: np.ndarray | None = None
    recorded_metrics: dict[str, float] = field(default_factory=dict)
    id: int | None = None
    admitted_at: str | None = None

    @property
    def best_score(self) -> float:
        return max((ex.overall_score for ex in self.examples), default=0.0)

    @property
    def best_example(self) -> StrategyExample | None:
        return max(self.examples, key=lambda ex: ex.overall_score, default=None)

    @classmethod
    def from_summary(cls, doc: Mapping) -> StrategyEntry:
        """Build an entry from the six-key summarizer object, validating it."""
        validate_summary(doc)
        return cls(
            name=doc["name"],
            definition=doc["definition"],
            technique=list(doc["technique"]),
            applicable_scenarios=list(doc["applicable_scenarios"]),
            characteristics=list(doc["characteristics"]),
            examples=[
                StrategyExample(ex["stego_excerpt"], float(ex["overall_score"]), {k: float(v) for k, v in ex["scores"].items()})
                for ex in doc["examples"]
            ],
        )

    def summary(self) -> dict:
        return {
            "name": self.name,
            "definition": self.definition,
            "technique": list(self.technique),
            "applicable_scenarios": list(self.applicable_scenarios),
            "characteristics": list(self.characteristics),
            "examples": [ex.to_json() for ex in self.examples],
        }

    def to_json(self) -> dict:
        return {
            "id": self.id,
            **self.summary(),
            "key": None if self.key is None else [float(x) for x in self.key],
            "recorded_metrics": dict(self.recorded_metrics),
            "admitted_at": self.admitted_at,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> StrategyEntry:
        entry = cls.from_summary({k: doc[k] for k in SUMMARY_KEYS if k in doc})
        key = doc.get("key")
        entry.key = None if key is None else np.asarray(key, dtype=np.float64)
        entry.recorded_metrics = {k: float(v) for k, v in (doc.get("recorded_metrics") or {}).items()}
        entry.id = doc.get("id")
        entry.admitted_at = doc.get("admitted_at")
        return entry


def validate_summary(doc: object, check_order: bool = False) -> None:
    if not isinstance(doc, Mapping):
        raise SchemaError(["entry must be a JSON object"])
    problems: list[str] = []
    keys = list(doc)
    missing = [k for k in SUMMARY_KEYS if k not in doc]
    extra = [k for k in keys if k not in SUMMARY_KEYS]
    if missing:
        problems.append(f"missing keys {missing}")
    if extra:
        problems.append(f"unexpected keys {extra}")
    if check_order and not missing and not extra and tuple(keys) != SUMMARY_KEYS:
        problems.append(f"keys out of order: {keys}")
    if problems:
        raise SchemaError(problems)
    for k in ("name", "definition"):
        if not isinstance(doc[k], str) or (k == "name" and not doc[k].strip()):
            problems.append(f"{k} must be a non-empty string" if k == "name" else f"{k} must be a string")
    for k in ("technique", "applicable_scenarios", "characteristics"):
        if not isinstance(doc[k], list) or not all(isinstance(x, str) for x in doc[k]):
            problems.append(f"{k} must be an array of strings")
    examples = doc["examples"]
    if not isinstance(examples, list) or not examples:
        problems.append("examples must be a non-empty array")
    else:
        for i, ex in enumerate(examples):
            if not isinstance(ex, Mapping) or set(ex) != set(EXAMPLE_KEYS):
                problems.append(f"examples[{i}] must have keys {list(EXAMPLE_KEYS)}")
                continue
            if not isinstance(ex["stego_excerpt"], str):
                problems.append(f"examples[{i}].stego_excerpt must be a string")
            if not _is_number(ex["overall_score"]) or not 0 <= ex["overall_score"] <= 10:
                problems.append(f"examples[{i}].overall_score must be a number in [0, 10]")
            if not isinstance(ex["scores"], Mapping) or not all(_is_number(v) for v in ex["scores"].values()):
                problems.append(f"examples[{i}].scores must map names to numbers")
    if problems:
        raise SchemaError(problems)


@dataclass(frozen=True)
class Admission:
    outcome: Outcome
    id: int | None


@dataclass(frozen=True)
class Shortlist:
    entries: tuple[tuple[int, float], ...]  # (entry id, discrepancy)
    k: int

    @property
    def ids(self) -> list[int]:
        return [i for i, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


def _utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def discrepancy(recorded: Mapping[str, float], current: Mapping[str, float]) -> float:
    """Potential improvement: summed amount by which ``recorded`` beats ``current``."""
    missing = [d for d in current if d not in recorded]
    if missing:
        raise DataError(f"recorded metrics lack dimensions {missing}")
    return sum(max(0.0, recorded[d] - current[d]) for d in current)


class StrategyLibrary:
    def __init__(
        self,
        embed_dim: int,
        provider_tag: str = "",
        dedup_threshold: float = 0.95,
        clock: Callable[[], str] = _utc_now,
    ) -> None:
        self.embed_dim = embed_dim
        self.provider_tag = provider_tag
        self.dedup_threshold = dedup_threshold
        self.clock = clock
        self._entries: dict[int, StrategyEntry] = {}
        self._next_id = 1

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[StrategyEntry]:
        return iter(self._entries.values())

    def __getitem__(self, entry_id: int) -> StrategyEntry:
        return self._entries[entry_id]

    def __contains__(self, entry_id: object) -> bool:
        return entry_id in self._entries

    @property
    def ids(self) -> list[int]:
        return list(self._entries)

    def _check_key(self, entry: StrategyEntry) -> None:
        if entry.key is None:
            raise SchemaError(["key is required"])
        if entry.key.shape != (self.embed_dim,):
            raise SchemaError([f"key has shape {entry.key.shape}, library expects ({self.embed_dim},)"])
        entry.key = unit(entry.key)

    def add(self, entry: StrategyEntry) -> int:
        """Insert without the admission gate (imports, curated seeds)."""
        validate_summary(entry.summary())
        self._check_key(entry)
        if entry.id is None or entry.id in self._entries:
            entry.id = self._next_id
        if entry.admitted_at is None:
            entry.admitted_at = self.clock()
        self._entries[entry.id] = entry
        self._entries = dict(sorted(self._entries.items()))
        self._next_id = max(self._next_id, entry.id + 1)
        return entry.id

    def dedupe(self, entry: StrategyEntry) -> int | None:
        """Id of the stored entry ``entry`` duplicates, or None."""
        name = normalize_name(entry.name)
        for existing in self._entries.values():
            if normalize_name(existing.name) == name:
                return existing.id
        if entry.key is not None and self._entries:
            sims = self._similarities(unit(entry.key))
            best = int(np.argmax(sims))
            if sims[best] >= self.dedup_threshold:
                return self.ids[best]
        return None

    def admit(self, entry: StrategyEntry, threshold: float) -> Admission:
        validate_summary(entry.summary())
        self._check_key(entry)
        if entry.best_score < threshold:
            logger.info("rejected %r: best score %.3f < %.3f", entry.name, entry.best_score, threshold)
            return Admission("rejected", None)
        dup = self.dedupe(entry)
        if dup is None:
            entry.id = None
            entry.admitted_at = None
            return Admission("admitted", self.add(entry))
        self._merge(self._entries[dup], entry)
        return Admission("merged", dup)

    def _merge(self, incumbent: StrategyEntry, other: StrategyEntry) -> None:
        seen = {(ex.stego_excerpt, ex.overall_score) for ex in incumbent.examples}
        merged = list(incumbent.examples)
        for ex in other.examples:
            if (ex.stego_excerpt, ex.overall_score) not in seen:
                merged.append(ex)
                seen.add((ex.stego_excerpt, ex.overall_score))
        if other.best_score > incumbent.best_score:
            incumbent.name = other.name
            incumbent.definition = other.definition
            incumbent.technique = list(other.technique)
            incumbent.applicable_scenarios = list(other.applicable_scenarios)
            incumbent.characteristics = list(other.characteristics)
            incumbent.key = other.key
            incumbent.recorded_metrics = dict(other.recorded_metrics)
        incumbent.examples = merged

    # -- retrieval ------------------------------------------------------

    def _similarities(self, query: np.ndarray) -> np.ndarray:
        keys = np.stack([e.key for e in self._entries.values()])
        # row-wise reduction: identical keys always give bit-identical scores
        return (keys * query).sum(axis=1)

    def retrieve(self, query: Sequence[float] | np.ndarray, count: int) -> list[int]:
        """Top ``count`` ids by cosine similarity, ties by ascending id."""
        if not self._entries or count <= 0:
            return []
        q = unit(query)
        if q.shape != (self.embed_dim,):
            raise DataError(f"query has shape {q.shape}, library expects ({self.embed_dim},)")
        sims = self._similarities(q)
        ids = np.array(self.ids)
        order = np.lexsort((ids, -sims))
        return [int(i) for i in ids[order[:count]]]

    def shortlist(self, candidates: Sequence[int], current: Mapping[str, float], k: int) -> Shortlist:
        scored = [(cid, discrepancy(self._entries[cid].recorded_metrics, current)) for cid in candidates]
        scored.sort(key=lambda item: (-item[1], item[0]))
        return Shortlist(tuple(scored[:k]), k)

    # -- persistence ----------------------------------------------------

    def header(self) -> dict:
        return {"version": LIBRARY_VERSION, "embed_dim": self.embed_dim, "provider_tag": self.provider_tag}

    def dumps(self) -> str:
        lines = [json.dumps(self.header())]
        lines += [json.dumps(e.to_json(), ensure_ascii=False) for e in self._entries.values()]
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        write_atomic(Path(path), self.dumps())

    @classmethod
    def load(
        cls,
        path: str | Path,
        dedup_threshold: float = 0.95,
        clock: Callable[[], str] = _utc_now,
    ) -> StrategyLibrary:
        text = Path(path).read_text(encoding="utf-8")
        return cls.loads(text, dedup_threshold, clock)

    @classmethod
    def loads(cls, text: str, dedup_threshold: float = 0.95, clock: Callable[[], str] = _utc_now) -> StrategyLibrary:
        lines = text.splitlines()
        if not lines or not lines[0].strip():
            raise LibraryFormatError(1, "missing header line")
        header = _parse_line(lines[0], 1)
        if not isinstance(header, dict) or "version" not in header:
            raise LibraryFormatError(1, "header must be an object with a version")
        if header["version"] != LIBRARY_VERSION:
            raise MigrationError(f"library version {header['version']!r} is not supported (expected {LIBRARY_VERSION})")
        lib = cls(int(header["embed_dim"]), header.get("provider_tag", ""), dedup_threshold, clock)
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            doc = _parse_line(line, lineno)
            try:
                entry = StrategyEntry.from_json(doc)
                if entry.id is None:
                    raise SchemaError(["id is required"])
                if entry.id in lib:
                    raise SchemaError([f"duplicate id {entry.id}"])
                lib.add(entry)
            except (DataError, KeyError, TypeError, ValueError) as exc:
                raise LibraryFormatError(lineno, str(exc)) from exc
        return lib


def _parse_line(line: str, lineno: int) -> object:
    try:
        return json.loads(line)
    except json.JSONDecodeError as exc:
        raise LibraryFormatError(lineno, f"invalid JSON: {exc.msg}") from None


def write_atomic(path: Path, text: str) -> None:
    """Write via a temporary file in the same directory, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise

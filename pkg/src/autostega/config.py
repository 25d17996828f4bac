"""Run configuration: one JSON document, strictly typed, unknown keys rejected.

Relative paths inside the document are resolved against the document's
directory.  Credentials are never stored in the file; a role names the
environment variable holding its key via ``api_key_env``.
"""

from __future__ import annotations

import dataclasses
import json
import math
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .codec import PUNCTUATION, CodecParams, punctuation_ids
from .errors import ConfigError
from .lm import Vocabulary
from .metrics import DEFAULT_DIMENSIONS, Dimension

ROLE_NAMES = ("steganography", "scorer", "summarizer", "decoder")


@dataclass
class CodecConfig:
    p_min: float = 0.88
    p_max: float = 0.95
    bin_count: int = 32
    typicality_tau: float = 4.0
    min_candidates: int = 64
    seed: int = 0
    boost_delta: float = math.log(2)
    sentence_target: int = 25
    closure_budget: int = 10
    grid_step: float = 0.01
    check_bits: int = 32
    punctuation: list[str] = field(default_factory=lambda: list(PUNCTUATION))

    def params(self, vocab: Vocabulary | None = None, seed: int | None = None) -> CodecParams:
        """Validated codec parameters; punctuation ids need the vocabulary."""
        fields = dataclasses.asdict(self)
        symbols = fields.pop("punctuation")
        if seed is not None:
            fields["seed"] = seed
        punct = punctuation_ids(vocab, symbols) if vocab is not None else frozenset()
        return CodecParams(**fields, punctuation=punct)


@dataclass
class DimensionConfig:
    metric: str
    band: list[list[float]]
    weight: float = 1.0

    def build(self) -> Dimension:
        return Dimension(self.metric, tuple((float(x), float(y)) for x, y in self.band), self.weight)


def _default_dimensions() -> dict[str, DimensionConfig]:
    return {
        name: DimensionConfig(d.metric, [list(p) for p in d.band], d.weight) for name, d in DEFAULT_DIMENSIONS.items()
    }


@dataclass
class MetricsConfig:
    threshold: float = 8.5
    dimensions: dict[str, DimensionConfig] = field(default_factory=_default_dimensions)
    embed_dim: int = 256
    embedder_url: str | None = None
    embedder_tag: str = "remote"
    detector_covers: str | None = None
    model: str | None = None

    def build_dimensions(self) -> dict[str, Dimension]:
        return {name: d.build() for name, d in self.dimensions.items()}


@dataclass
class LibraryConfig:
    path: str | None = None
    dedup_threshold: float = 0.95
    # fixed admission timestamp for reproducible library files
    fixed_clock: str | None = None


@dataclass
class RoleConfig:
    endpoint: str | None = None
    model: str = ""
    temperature: float = 0.7
    api_key_env: str | None = None
    mock_transcript: str | None = None
    timeout: float = 120.0


@dataclass
class BudgetConfig:
    warmup: int = 150
    runtime: int = 5
    k: int = 3
    gamma: float = 0.5
    sample_every: int = 0
    sample_seed: int = 0


@dataclass
class Config:
    codec: CodecConfig = field(default_factory=CodecConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    library: LibraryConfig = field(default_factory=LibraryConfig)
    roles: dict[str, RoleConfig] = field(default_factory=dict)
    budgets: BudgetConfig = field(default_factory=BudgetConfig)

    def validate(self) -> None:
        self.codec.params()
        self.metrics.build_dimensions()
        unknown = set(self.roles) - set(ROLE_NAMES)
        if unknown:
            raise ConfigError(f"unknown roles {sorted(unknown)}")
        if not 0 <= self.metrics.threshold <= 10:
            raise ConfigError("metrics.threshold must lie in [0, 10]")
        if self.budgets.warmup < 0 or self.budgets.runtime < 1 or self.budgets.k < 1:
            raise ConfigError("budgets need warmup >= 0, runtime >= 1, k >= 1")
        if self.budgets.gamma < 0:
            raise ConfigError("budgets.gamma must be >= 0")
        if not 0 < self.library.dedup_threshold <= 1:
            raise ConfigError("library.dedup_threshold must lie in (0, 1]")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)


def _convert(tp, value, where: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _convert(inner[0], value, where)
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, where)
    if origin is dict:
        if not isinstance(value, dict):
            raise ConfigError(f"{where} must be an object")
        return {str(k): _convert(args[1], v, f"{where}.{k}") for k, v in value.items()}
    if origin is list:
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return [_convert(args[0], v, f"{where}[{i}]") for i, v in enumerate(value)]
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where} must be a number")
        return float(value)
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where} must be an integer")
        return value
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    return value


def _build(cls, doc, where: str):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where} must be an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {unknown}")
    kwargs = {k: _convert(hints[k], v, f"{where}.{k}") for k, v in doc.items()}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _resolve(path: str | None, base: Path) -> str | None:
    if path is None or Path(path).is_absolute():
        return path
    return str((base / path).resolve())


def config_from_json(doc: dict, base: Path | None = None) -> Config:
    cfg = _build(Config, doc, "config")
    if base is not None:
        cfg.metrics.model = _resolve(cfg.metrics.model, base)
        cfg.metrics.detector_covers = _resolve(cfg.metrics.detector_covers, base)
        cfg.library.path = _resolve(cfg.library.path, base)
        for role in cfg.roles.values():
            role.mock_transcript = _resolve(role.mock_transcript, base)
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        cfg = Config()
        cfg.validate()
        return cfg
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc.msg} (line {exc.lineno})") from None
    return config_from_json(doc, path.parent)

"""Evaluation metrics: embedding rate, perplexity, similarity, KLD, scoring."""

from __future__ import annotations

import hashlib
import logging
import math
import re
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Protocol

import httpx
import numpy as np

from .errors import ConfigError, DataError, TransportError
from .lm import LanguageModel, TokenContext

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-6
REPORT_FIELDS = ("er", "ppl", "ppl_star", "ss", "kld", "detector")


class IncompleteReportError(DataError):
    def __init__(self, missing: Sequence[str]) -> None:
        super().__init__(f"report is missing metrics: {', '.join(missing)}")
        self.missing = list(missing)


# -- embedding rate and perplexity -------------------------------------------


def word_count(text: str) -> int:
    return len(text.split())


def embedding_rate(payload_bits: int, stego_text: str, exact: bool = False) -> float | Fraction:
    """Payload bits per whitespace word."""
    words = word_count(stego_text)
    if words == 0:
        raise DataError("embedding rate is undefined for empty text")
    rate = Fraction(payload_bits, words)
    return rate if exact else float(rate)


def perplexity(text: str, model: LanguageModel) -> float:
    ids = model.vocab.tokenize(text)
    if not ids:
        raise DataError("perplexity needs at least one token")
    ctx = TokenContext()
    log_sum = 0.0
    for i, tok in enumerate(ids):
        p = float(model.next_token_distribution(ctx).probs[tok])
        if p <= 0:
            logger.warning("zero probability for token %r at position %d", model.vocab.tokens[tok], i)
            return math.inf
        log_sum += math.log(p)
        ctx.push(tok)
    return math.exp(-log_sum / len(ids))


def ppl_star(stego_ppl: float, cover_ppl: float) -> float:
    """Normalized perplexity deviation ``|stego - cover| / cover``."""
    if not cover_ppl > 0:
        raise DataError(f"cover perplexity must be positive, got {cover_ppl}")
    return abs(stego_ppl - cover_ppl) / cover_ppl


# -- embeddings ---------------------------------------------------------------


class Embedder(Protocol):
    dim: int
    tag: str

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    return np.divide(vectors, norms, out=np.zeros_like(vectors), where=norms > 0)


class HashedTfEmbedder:
    """L2-normalized term frequencies hashed into ``dim`` buckets."""

    def __init__(self, dim: int = 256) -> None:
        if dim < 1:
            raise ConfigError("embedding dimension must be positive")
        self.dim = dim
        self.tag = f"hashed-tf-{dim}"

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim))
        for row, text in enumerate(texts):
            for tok in text.lower().split():
                out[row, self.bucket(tok)] += 1.0
        return _normalize_rows(out)


class RemoteEmbedder:
    """HTTP embedder: ``{"texts": [...]}`` -> ``{"vectors": [[...], ...]}``."""

    def __init__(self, url: str, dim: int, tag: str = "remote", client: httpx.Client | None = None) -> None:
        self.url = url
        self.dim = dim
        self.tag = tag
        self._client = client or httpx.Client(timeout=30.0)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        try:
            resp = self._client.post(self.url, json={"texts": list(texts)})
            resp.raise_for_status()
            vectors = np.asarray(resp.json()["vectors"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, ValueError, TypeError) as exc:
            raise TransportError(f"embedding provider failed: {exc}") from exc
        if vectors.shape != (len(texts), self.dim):
            raise TransportError(f"embedding provider returned shape {vectors.shape}")
        return _normalize_rows(vectors)


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def semantic_similarity(text_a: str, text_b: str, embedder: Embedder) -> float:
    if not text_a.strip() or not text_b.strip():
        raise DataError("semantic similarity needs two non-empty texts")
    va, vb = embedder.embed([text_a, text_b])
    return cosine(va, vb)


# -- KLD ----------------------------------------------------------------------


def kld(cover: np.ndarray, stego: np.ndarray, floor: float = SIGMA_FLOOR) -> float:
    """Summed per-dimension Gaussian KL divergence between two embedding sets.

    ``cover`` supplies (mu_x, sigma_x), ``stego`` supplies (mu_y, sigma_y);
    standard deviations are sample (ddof=1) estimates floored at ``floor``.
    """
    x = np.atleast_2d(np.asarray(cover, dtype=np.float64))
    y = np.atleast_2d(np.asarray(stego, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise DataError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    if x.shape[0] < 2 or y.shape[0] < 2:
        raise DataError("KLD needs at least two vectors per set")
    mu_x, mu_y = x.mean(axis=0), y.mean(axis=0)
    sd_x = np.maximum(x.std(axis=0, ddof=1), floor)
    sd_y = np.maximum(y.std(axis=0, ddof=1), floor)
    terms = np.log(sd_y / sd_x) + (sd_x**2 + (mu_x - mu_y) ** 2) / (2 * sd_y**2) - 0.5
    return float(terms.sum())


def kld_from_moments(mu_x: float, sigma_x: float, mu_y: float, sigma_y: float) -> float:
    return math.log(sigma_y / sigma_x) + (sigma_x**2 + (mu_x - mu_y) ** 2) / (2 * sigma_y**2) - 0.5


def log10_kld(value: float) -> float:
    return math.log10(value) if value > 0 else -math.inf


_SENTENCE_END = re.compile(r"(?<=[.!?])\s+")


def segments(text: str, window: int = 8) -> list[str]:
    """Sentence split, falling back to fixed word windows for one-sentence texts."""
    parts = [s for s in _SENTENCE_END.split(text.strip()) if s.strip()]
    if len(parts) >= 2:
        return parts
    words = text.split()
    return [" ".join(words[i : i + window]) for i in range(0, len(words), window)]


# -- detector stub --------------------------------------------------------------


def text_features(text: str) -> np.ndarray:
    words = text.split()
    if not words:
        return np.zeros(3)
    ttr = len({w.lower() for w in words}) / len(words)
    mean_len = sum(len(w) for w in words) / len(words)
    punct = sum(1 for ch in text if ch in ".,;:!?\"'()-") / len(words)
    return np.array([ttr, mean_len, punct])


class BaselineDetector:
    """Logistic score on the z-distance of simple text statistics from covers.

    The logistic midpoint is the largest distance seen among the calibration
    covers, so every calibration cover scores at most 0.5.
    """

    MIN_CALIBRATION = 10

    def __init__(self, covers: Sequence[str], slope: float = 3.0) -> None:
        covers = [c for c in covers if c.split()]
        if len(covers) < self.MIN_CALIBRATION:
            raise ConfigError(f"detector needs >= {self.MIN_CALIBRATION} cover samples, got {len(covers)}")
        feats = np.array([text_features(c) for c in covers])
        self.mean = feats.mean(axis=0)
        self.std = np.maximum(feats.std(axis=0), 1e-3)
        self.slope = slope
        self.midpoint = max(self._distance(f) for f in feats)

    def _distance(self, feats: np.ndarray) -> float:
        z = (feats - self.mean) / self.std
        return float(np.sqrt(np.mean(z**2)))

    def score(self, text: str) -> float:
        d = self._distance(text_features(text))
        return 1.0 / (1.0 + math.exp(-self.slope * (d - self.midpoint)))

    def score_many(self, texts: Sequence[str]) -> list[float]:
        return [self.score(t) for t in texts]


# -- report and aggregation ---------------------------------------------------


@dataclass
class EvaluationReport:
    er: float | None = None
    ppl: float | None = None
    ppl_star: float | None = None
    ss: float | None = None
    kld: float | None = None
    detector: float | None = None
    response_text: str = ""
    dimension_scores: dict[str, float] = field(default_factory=dict)
    overall: float | None = None

    def missing(self, names: Sequence[str] = REPORT_FIELDS) -> list[str]:
        return [n for n in names if getattr(self, n) is None]

    def to_json(self) -> dict:
        return {
            "er": self.er,
            "ppl": self.ppl,
            "ppl_star": self.ppl_star,
            "ss": self.ss,
            "kld": self.kld,
            "detector": self.detector,
            "overall": self.overall,
            "scores": dict(self.dimension_scores),
            "response": self.response_text,
        }

    @classmethod
    def from_json(cls, doc: Mapping) -> EvaluationReport:
        return cls(
            er=doc.get("er"),
            ppl=doc.get("ppl"),
            ppl_star=doc.get("ppl_star"),
            ss=doc.get("ss"),
            kld=doc.get("kld"),
            detector=doc.get("detector"),
            response_text=doc.get("response", ""),
            dimension_scores=dict(doc.get("scores", {})),
            overall=doc.get("overall"),
        )


@dataclass(frozen=True)
class Dimension:
    """Maps one report metric to [0, 10] by piecewise-linear interpolation."""

    metric: str
    band: tuple[tuple[float, float], ...]
    weight: float = 1.0

    def __post_init__(self) -> None:
        xs = [x for x, _ in self.band]
        if len(xs) < 2 or xs != sorted(xs):
            raise ConfigError(f"band for {self.metric} needs >= 2 points in ascending order")
        if self.weight < 0:
            raise ConfigError("dimension weights must be non-negative")

    def score(self, value: float) -> float:
        xs, ys = zip(*self.band)
        return round(float(np.clip(np.interp(value, xs, ys), 0.0, 10.0)), 1)


DEFAULT_DIMENSIONS: dict[str, Dimension] = {
    "efficiency": Dimension("er", ((0.0, 0.0), (5.0, 10.0))),
    "fluency": Dimension("ppl_star", ((0.0, 10.0), (0.05, 10.0), (1.0, 0.0))),
    "semantic": Dimension("ss", ((0.0, 0.0), (0.6, 8.0), (0.9, 10.0))),
    "statistical": Dimension("kld", ((0.0, 10.0), (1.0, 10.0), (10.0, 0.0))),
    # 10 - 10p on the detector probability
    "security": Dimension("detector", ((0.0, 10.0), (1.0, 0.0))),
}


def detector_points(p: float) -> float:
    return round(10.0 - 10.0 * p, 1)


def weighted_mean(scores: Mapping[str, float], dimensions: Mapping[str, Dimension] | None = None) -> float:
    if not scores:
        raise DataError("no dimension scores to aggregate")
    dimensions = dimensions or {}
    weights = {name: dimensions[name].weight if name in dimensions else 1.0 for name in scores}
    total = sum(weights.values())
    if total <= 0:
        raise ConfigError("dimension weights sum to zero")
    return sum(weights[n] * scores[n] for n in scores) / total


def dimension_scores(report: EvaluationReport, dimensions: Mapping[str, Dimension]) -> dict[str, float]:
    missing = [d.metric for d in dimensions.values() if getattr(report, d.metric) is None]
    if missing:
        raise IncompleteReportError(missing)
    return {name: dim.score(getattr(report, dim.metric)) for name, dim in dimensions.items()}


def aggregate_score(
    report: EvaluationReport,
    dimensions: Mapping[str, Dimension] = DEFAULT_DIMENSIONS,
    scorer_scores: Mapping[str, float] | None = None,
) -> float:
    """Fill ``report.dimension_scores`` and ``report.overall``; return the overall score.

    External scorer scores, when given, replace the band-mapped vector.
    """
    if scorer_scores is not None:
        scores = {k: float(v) for k, v in scorer_scores.items()}
        if any(not 0.0 <= v <= 10.0 for v in scores.values()):
            raise DataError("scorer dimension scores must lie in [0, 10]")
    else:
        scores = dimension_scores(report, dimensions)
    report.dimension_scores = scores
    report.overall = weighted_mean(scores, dimensions)
    return report.overall


def compute_report(
    stego_text: str,
    cover_text: str,
    payload_bits: int,
    model: LanguageModel,
    embedder: Embedder,
    detector: BaselineDetector | None = None,
) -> EvaluationReport:
    """All automatic metrics for one stego/cover pair; failures leave fields unset."""
    report = EvaluationReport()
    try:
        report.er = embedding_rate(payload_bits, stego_text)
    except DataError as exc:
        logger.warning("embedding rate: %s", exc)
    try:
        report.ppl = perplexity(stego_text, model)
        report.ppl_star = ppl_star(report.ppl, perplexity(cover_text, model))
    except DataError as exc:
        logger.warning("perplexity: %s", exc)
    try:
        report.ss = semantic_similarity(stego_text, cover_text, embedder)
    except DataError as exc:
        logger.warning("similarity: %s", exc)
    try:
        report.kld = kld(embedder.embed(segments(cover_text)), embedder.embed(segments(stego_text)))
    except DataError as exc:
        logger.warning("kld: %s", exc)
    if detector is not None:
        report.detector = detector.score(stego_text)
    return report

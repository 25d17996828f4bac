"""Warm-up and lifelong-learning loops over the strategy library."""

from __future__ import annotations

import json
import logging
import random
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from ..bitstream import bits_to_bytes, bytes_to_bits, format_bits, parse_bits
from ..errors import ConfigError, DataError, ParseError
from ..library import Admission, SchemaError, Shortlist, StrategyEntry, StrategyLibrary, validate_summary, write_atomic
from ..lm import LanguageModel
from ..metrics import (
    DEFAULT_DIMENSIONS,
    BaselineDetector,
    Dimension,
    Embedder,
    EvaluationReport,
    aggregate_score,
    compute_report,
)
from . import prompts
from .clients import RoleSet

logger = logging.getLogger(__name__)

Mode = Literal["none", "single", "compose", "discovery"]


@dataclass(frozen=True)
class Request:
    cover_text: str
    secret: bytes
    requirements: str = ""
    budget: int = 5
    threshold: float = 8.5

    def __post_init__(self) -> None:
        if self.budget < 1:
            raise ConfigError("request budget must be >= 1")
        if not 0.0 <= self.threshold <= 10.0:
            raise ConfigError("threshold must lie in [0, 10]")

    @property
    def secret_bits(self) -> str:
        return format_bits(bytes_to_bits(self.secret))

    @classmethod
    def from_json(cls, doc: Mapping, budget: int = 5, threshold: float = 8.5) -> Request:
        unknown = set(doc) - {"cover_text", "secret_hex", "secret_bits", "requirements", "budget", "threshold"}
        if unknown:
            raise ConfigError(f"unknown request keys {sorted(unknown)}")
        if "secret_hex" in doc:
            secret = bytes.fromhex(doc["secret_hex"])
        elif "secret_bits" in doc:
            secret = bits_to_bytes(parse_bits(doc["secret_bits"]))
        else:
            raise ConfigError("request needs secret_hex or secret_bits")
        return cls(
            cover_text=doc["cover_text"],
            secret=secret,
            requirements=doc.get("requirements", ""),
            budget=int(doc.get("budget", budget)),
            threshold=float(doc.get("threshold", threshold)),
        )


@dataclass
class StegoRecord:
    iteration: int
    stego_text: str
    report: EvaluationReport
    strategies_used: list[int] = field(default_factory=list)
    mode: Mode = "none"
    incomplete: list[str] = field(default_factory=list)

    @property
    def score(self) -> float | None:
        return self.report.overall

    def summary_view(self) -> dict:
        return {
            "iteration": self.iteration,
            "stego_text": self.stego_text,
            "evaluation": {
                "overall": self.report.overall,
                "scores": dict(self.report.dimension_scores),
                "rationale": self.report.response_text,
            },
            "used_strategies": list(self.strategies_used),
        }


# -- generation -----------------------------------------------------------------


def extract_stego(response: str) -> str:
    starts = response.count(prompts.START_MARKER)
    ends = response.count(prompts.END_MARKER)
    if starts != 1 or ends != 1:
        raise ParseError(f"expected one marker pair, found {starts} start / {ends} end markers", raw=response)
    head, _, rest = response.partition(prompts.START_MARKER)
    body, _, _ = rest.partition(prompts.END_MARKER)
    if prompts.END_MARKER in head:
        raise ParseError("end marker precedes start marker", raw=response)
    return body.strip()


def generate_stego(roles: RoleSet, request: Request, strategies: Sequence[StrategyEntry] = ()) -> str:
    prompt = prompts.generation_prompt(request.secret_bits, request.cover_text, strategies)
    return extract_stego(roles.ask("steganography", prompt))


# -- evaluation -----------------------------------------------------------------


def parse_json_only(response: str) -> object:
    """Parse a response that must be a single JSON value with nothing around it."""
    text = response.strip()
    if not text.startswith(("{", "[")):
        raise ParseError("response is not JSON-only", raw=response)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc.msg}", raw=response) from None


def parse_scorer(response: str) -> tuple[dict[str, float], str]:
    doc = parse_json_only(response)
    if not isinstance(doc, dict) or not isinstance(doc.get("scores"), dict) or not doc["scores"]:
        raise ParseError("scorer reply needs a non-empty 'scores' object", raw=response)
    scores = {}
    for name, value in doc["scores"].items():
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not 0 <= value <= 10:
            raise ParseError(f"score {name!r} must be a number in [0, 10]", raw=response)
        scores[name] = float(value)
    return scores, str(doc.get("rationale", ""))


def metrics_rationale(report: EvaluationReport) -> str:
    parts = [f"{name} {score:.1f}" for name, score in report.dimension_scores.items()]
    return "dimension scores: " + ", ".join(parts) if parts else "no dimension scores"


@dataclass
class Evaluator:
    model: LanguageModel
    embedder: Embedder
    detector: BaselineDetector | None = None
    dimensions: Mapping[str, Dimension] = field(default_factory=lambda: dict(DEFAULT_DIMENSIONS))
    roles: RoleSet | None = None

    @property
    def uses_scorer(self) -> bool:
        return self.roles is not None and self.roles.has("scorer")

    def evaluate(self, stego_text: str, request: Request) -> tuple[EvaluationReport, list[str]]:
        """Report plus the names of metrics that failed; S is withheld when any did."""
        report = compute_report(
            stego_text, request.cover_text, len(request.secret) * 8, self.model, self.embedder, self.detector
        )
        required = {d.metric for d in self.dimensions.values()}
        if self.detector is None:
            required.discard("detector")
        missing = sorted(m for m in required if getattr(report, m) is None)
        if missing:
            logger.warning("incomplete report, overall score withheld: %s", missing)
            return report, missing
        scorer_scores = None
        if self.uses_scorer:
            metrics = {k: v for k, v in report.to_json().items() if k in {"er", "ppl", "ppl_star", "ss", "kld", "detector"}}
            reply = self.roles.ask(
                "scorer", prompts.scorer_prompt(stego_text, request.cover_text, metrics, request.requirements)
            )
            scorer_scores, rationale = parse_scorer(reply)
            report.response_text = rationale
        dims = self.dimensions if self.detector is not None or scorer_scores is not None else {
            k: d for k, d in self.dimensions.items() if d.metric != "detector"
        }
        aggregate_score(report, dims, scorer_scores)
        if not report.response_text:
            report.response_text = metrics_rationale(report)
        return report, []


# -- summarization ----------------------------------------------------------------


def summarize(
    roles: RoleSet,
    records: Sequence[StegoRecord],
    cover_text: str,
    embedder: Embedder,
) -> StrategyEntry | None:
    if not records:
        raise DataError("summarize needs at least one record")
    payload = prompts.summarizer_input([r.summary_view() for r in records], cover_text)
    reply = roles.chat(
        "summarizer",
        [{"role": "system", "content": prompts.template("summarizer")}, {"role": "user", "content": payload}],
    )
    doc = parse_json_only(reply)
    if doc == {}:
        return None
    try:
        validate_summary(doc, check_order=True)
    except SchemaError as exc:
        raise SchemaError([*exc.problems, f"raw response: {reply[:200]!r}"]) from None
    entry = StrategyEntry.from_summary(doc)
    best = max(records, key=lambda r: (r.score if r.score is not None else -1.0, -r.iteration))
    entry.key = embedder.embed([best.report.response_text or metrics_rationale(best.report)])[0]
    entry.recorded_metrics = dict(best.report.dimension_scores)
    return entry


# -- mode selection ---------------------------------------------------------------


@dataclass(frozen=True)
class ModeChoice:
    mode: Mode
    ids: tuple[int, ...]


def select_mode(shortlist: Shortlist, library: StrategyLibrary, threshold: float, gamma: float = 0.5) -> ModeChoice:
    """Single-best, compose, or alternative discovery; exactly one applies."""
    gamma_set = [(i, d) for i, d in shortlist.entries if library[i].best_score >= threshold]
    if not gamma_set:
        return ModeChoice("discovery", ())
    d1 = gamma_set[0][1]
    if len(gamma_set) == 1 or d1 - gamma_set[1][1] > gamma:
        return ModeChoice("single", (gamma_set[0][0],))
    near = sorted(i for i, d in gamma_set if d >= d1 - gamma)
    return ModeChoice("compose", tuple(near))


# -- decoding ---------------------------------------------------------------------


def decode_secret(roles: RoleSet, stego_text: str, entry: StrategyEntry) -> bytes:
    if not stego_text.strip():
        raise DataError("stego text is empty")
    reply = roles.ask("decoder", prompts.decoder_prompt(stego_text, entry))
    try:
        bits = parse_bits(reply)
    except ValueError as exc:
        raise ParseError(f"decoder did not return a bitstring: {exc}", raw=reply) from None
    if len(bits) % 8:
        raise ParseError(f"decoded {len(bits)} bits, not a whole number of bytes", raw=reply)
    return bits_to_bytes(bits)


# -- ledger -----------------------------------------------------------------------


def _rounded(value: object, digits: int = 10) -> object:
    if isinstance(value, float):
        return round(value, digits)
    if isinstance(value, dict):
        return {k: _rounded(v, digits) for k, v in value.items()}
    if isinstance(value, list):
        return [_rounded(v, digits) for v in value]
    return value


class Ledger:
    """Append-only JSON Lines run log.

    Contains no wall-clock data, and floats are rounded to 10 decimals so
    replays compare byte-for-byte.
    """

    def __init__(self) -> None:
        self.lines: list[str] = []

    def log(self, event: str, **fields) -> None:
        self.lines.append(json.dumps(_rounded({"event": event, **fields}), ensure_ascii=False))

    def record(self, request_index: int, record: StegoRecord) -> None:
        self.log(
            "record",
            request=request_index,
            iteration=record.iteration,
            mode=record.mode,
            strategies_used=list(record.strategies_used),
            stego_text=record.stego_text,
            report=record.report.to_json(),
            incomplete=list(record.incomplete),
        )

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def save(self, path: str | Path) -> None:
        write_atomic(Path(path), self.text())

    def events(self, kind: str | None = None) -> list[dict]:
        docs = [json.loads(line) for line in self.lines]
        return [d for d in docs if kind is None or d["event"] == kind]


# -- loops ------------------------------------------------------------------------


@dataclass
class AgentContext:
    roles: RoleSet
    evaluator: Evaluator
    library: StrategyLibrary
    ledger: Ledger = field(default_factory=Ledger)
    k: int = 3
    gamma: float = 0.5

    def admit(self, request_index: int, iteration: int, pair: Sequence[StegoRecord], entry: StrategyEntry | None, threshold: float, reason: str) -> Admission | None:
        if entry is None:
            self.ledger.log("summary", request=request_index, iteration=iteration, reason=reason,
                            pair=[r.iteration for r in pair], result="empty", entry_id=None, name=None, best_score=None)
            return None
        admission = self.library.admit(entry, threshold)
        self.ledger.log("summary", request=request_index, iteration=iteration, reason=reason,
                        pair=[r.iteration for r in pair], result=admission.outcome, entry_id=admission.id,
                        name=entry.name, best_score=entry.best_score)
        return admission

    def run_iteration(self, request_index: int, request: Request, iteration: int, strategies: Sequence[StrategyEntry], mode: Mode) -> StegoRecord:
        text = generate_stego(self.roles, request, strategies)
        report, missing = self.evaluator.evaluate(text, request)
        used = [e.id for e in strategies if e.id is not None]
        record = StegoRecord(iteration, text, report, used, mode, missing)
        self.ledger.record(request_index, record)
        return record


def _best(records: Sequence[StegoRecord]) -> StegoRecord | None:
    scored = [r for r in records if r.score is not None]
    return max(scored, key=lambda r: (r.score, -r.iteration), default=None)


def _improvement_summary(ctx: AgentContext, request_index: int, request: Request, history: list[StegoRecord], record: StegoRecord) -> None:
    previous = _best(history[:-1])
    if previous is None or record.score is None or record.score <= previous.score:
        return
    pair = [previous, record]
    entry = summarize(ctx.roles, pair, request.cover_text, ctx.evaluator.embedder)
    ctx.admit(request_index, record.iteration, pair, entry, request.threshold, "improvement")


def warmup(
    ctx: AgentContext,
    requests: Sequence[Request],
    iterations: int,
    sample_every: int = 0,
    seed: int = 0,
) -> StrategyLibrary:
    """Round-robin generate/evaluate over ``requests`` without strategies.

    Improvement pairs are summarized as they occur; with ``sample_every`` > 0
    a seeded random pair from the same request is summarized every that many
    iterations as well.
    """
    if iterations < 0:
        raise ConfigError("warm-up iterations must be >= 0")
    if iterations and not requests:
        raise ConfigError("warm-up needs at least one request")
    rng = random.Random(seed)
    histories: list[list[StegoRecord]] = [[] for _ in requests]
    for t in range(iterations):
        ri = t % len(requests)
        request, history = requests[ri], histories[ri]
        record = ctx.run_iteration(ri, request, len(history) + 1, (), "none")
        history.append(record)
        _improvement_summary(ctx, ri, request, history, record)
        if sample_every and (t + 1) % sample_every == 0 and len(history) >= 2:
            pair = sorted(rng.sample(history, 2), key=lambda r: r.iteration)
            entry = summarize(ctx.roles, pair, request.cover_text, ctx.evaluator.embedder)
            ctx.admit(ri, record.iteration, pair, entry, request.threshold, "sampled")
    ctx.ledger.log("warmup_done", iterations=iterations, library_size=len(ctx.library))
    return ctx.library


@dataclass(frozen=True)
class StepOutcome:
    status: Literal["accepted", "retry", "exhausted"]
    record: StegoRecord

    @property
    def score(self) -> float | None:
        return self.record.score


class LifelongSession:
    """One request's lifelong-learning run; call :meth:`step` until it stops returning ``retry``."""

    def __init__(self, ctx: AgentContext, request: Request, request_index: int = 0) -> None:
        self.ctx = ctx
        self.request = request
        self.request_index = request_index
        self.history: list[StegoRecord] = []
        self.next_strategies: list[StrategyEntry] = []
        self.next_mode: Mode = "none"
        self.done = False

    def step(self) -> StepOutcome:
        if self.done:
            raise DataError("session already finished")
        ctx, request = self.ctx, self.request
        record = ctx.run_iteration(
            self.request_index, request, len(self.history) + 1, self.next_strategies, self.next_mode
        )
        self.history.append(record)
        _improvement_summary(ctx, self.request_index, request, self.history, record)
        if record.score is not None and record.score >= request.threshold:
            return self._finish("accepted", record)
        if len(self.history) >= request.budget:
            return self._finish("exhausted", record)
        self._plan(record)
        return StepOutcome("retry", record)

    def run(self) -> StepOutcome:
        while True:
            outcome = self.step()
            if outcome.status != "retry":
                return outcome

    def _finish(self, status: Literal["accepted", "exhausted"], record: StegoRecord) -> StepOutcome:
        self.done = True
        best = _best(self.history)
        self.ctx.ledger.log(
            "outcome",
            request=self.request_index,
            status=status,
            iterations=len(self.history),
            final_score=record.score,
            best_iteration=None if best is None else best.iteration,
            best_score=None if best is None else best.score,
        )
        return StepOutcome(status, record)

    def _plan(self, record: StegoRecord) -> None:
        ctx = self.ctx
        choice = ModeChoice("discovery", ())
        shortlist = Shortlist((), ctx.k)
        if record.score is not None and len(ctx.library):
            query = ctx.evaluator.embedder.embed([record.report.response_text])[0]
            candidates = ctx.library.retrieve(query, 2 * ctx.k) if np.any(query) else []
            current = record.report.dimension_scores
            comparable = [c for c in candidates if set(current) <= set(ctx.library[c].recorded_metrics)]
            shortlist = ctx.library.shortlist(comparable, current, ctx.k)
            choice = select_mode(shortlist, ctx.library, self.request.threshold, ctx.gamma)
        ctx.ledger.log(
            "plan",
            request=self.request_index,
            iteration=record.iteration,
            shortlist=[[i, round(d, 6)] for i, d in shortlist.entries],
            mode=choice.mode,
            ids=list(choice.ids),
        )
        self.next_mode = choice.mode
        if choice.mode != "discovery":
            self.next_strategies = [ctx.library[i] for i in choice.ids]
            return
        entry = summarize(ctx.roles, self.history, self.request.cover_text, ctx.evaluator.embedder)
        ctx.admit(self.request_index, record.iteration, self.history, entry, self.request.threshold, "discovery")
        self.next_strategies = [] if entry is None else [entry]


def run_requests(ctx: AgentContext, requests: Sequence[Request]) -> list[StepOutcome]:
    return [LifelongSession(ctx, req, i).run() for i, req in enumerate(requests)]


def evaluate_request(evaluator: Evaluator, stego_text: str, request: Request) -> EvaluationReport:
    """Evaluate one stego text; an incomplete report has ``overall`` left as None."""
    report, _ = evaluator.evaluate(stego_text, request)
    return report

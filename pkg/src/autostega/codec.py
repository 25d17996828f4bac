"""Parity-constrained dynamic nucleus-typical encoder (PC-DNTE).

Every step derives a candidate layout from shared state only:

1. adapt the nucleus threshold on a fixed grid,
2. take the nucleus in canonical order (probability desc, id asc),
3. drop atypical tokens unless that would leave fewer than ``min_candidates``,
4. split the survivors into ``bin_count`` contiguous equal-mass bins.

The encoder reads 5 bits to pick a bin and, when the bin holds both
seed-keyed parity classes, one more bit to pick the parity.  The decoder
recomputes the layout and reads the bits back from the observed token.
Steps whose layout cannot carry bits emit the greedy token and consume
nothing, so both sides always agree on how many bits a step carried.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, replace
from typing import Literal

import numpy as np

from .bitstream import (
    HEADER_BITS,
    BitBuffer,
    EndOfMessage,
    bits_to_bytes,
    bits_to_int,
    format_bits,
    frame,
    int_to_bits,
)
from .errors import ConfigError, DataError, DesyncError, IncompletePayloadError, IntegrityError
from .hashing import MASK64, fnv1a64, u64le
from .lm import LanguageModel, TokenContext, TokenDistribution, Vocabulary

logger = logging.getLogger(__name__)

StepKind = Literal["full-embed", "index-only", "no-embed"]

# consecutive zero-capacity steps tolerated before the encoder gives up
MAX_IDLE_STEPS = 4096
PUNCTUATION = (".", "!", "?")


@dataclass(frozen=True)
class CodecParams:
    p_min: float = 0.88
    p_max: float = 0.95
    bin_count: int = 32
    typicality_tau: float = 4.0
    min_candidates: int = 64
    seed: int = 0
    boost_delta: float = math.log(2)
    sentence_target: int = 25
    closure_budget: int = 10
    punctuation: frozenset[int] = frozenset()
    grid_step: float = 0.01
    # keyed integrity tag appended after the payload; 0 disables it
    check_bits: int = 32

    def __post_init__(self) -> None:
        object.__setattr__(self, "punctuation", frozenset(int(i) for i in self.punctuation))
        self.validate()

    def validate(self) -> None:
        if not 0 < self.p_min <= self.p_max <= 1:
            raise ConfigError(f"need 0 < p_min <= p_max <= 1, got {self.p_min}, {self.p_max}")
        b = self.bin_count
        if b < 2 or b & (b - 1):
            raise ConfigError(f"bin_count must be a power of two >= 2, got {b}")
        if self.min_candidates < 2 * b:
            raise ConfigError(f"min_candidates must be >= 2*bin_count ({2 * b})")
        if not self.typicality_tau >= 0:
            raise ConfigError("typicality_tau must be >= 0")
        if not self.grid_step > 0:
            raise ConfigError("grid_step must be > 0")
        if not (math.isfinite(self.boost_delta) and self.boost_delta >= 0):
            raise ConfigError("boost_delta must be finite and >= 0")
        if self.sentence_target < 1 or self.closure_budget < 0:
            raise ConfigError("sentence_target must be >= 1 and closure_budget >= 0")
        if not 0 <= self.seed <= MASK64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if not 0 <= self.check_bits <= 64:
            raise ConfigError("check_bits must be in [0, 64]")

    @property
    def index_bits(self) -> int:
        return self.bin_count.bit_length() - 1

    def with_seed(self, seed: int) -> CodecParams:
        return replace(self, seed=seed)


def punctuation_ids(vocab: Vocabulary, symbols: Sequence[str] = PUNCTUATION) -> frozenset[int]:
    return frozenset(vocab.id(s) for s in symbols if s in vocab)


# -- shared derivation ------------------------------------------------------


@dataclass(frozen=True)
class Candidates:
    ids: np.ndarray  # canonical order
    probs: np.ndarray  # renormalized over ``ids``
    base_probs: np.ndarray  # probabilities under the full distribution

    def __len__(self) -> int:
        return int(self.ids.size)


@dataclass(frozen=True)
class BinLayout:
    p_used: float
    candidates: Candidates
    bounds: tuple[int, ...]  # bin m spans candidates[bounds[m]:bounds[m+1]]
    masses: tuple[float, ...]
    context_hash: int
    degenerate: bool

    @property
    def bin_count(self) -> int:
        return len(self.masses)

    def bin_ids(self, m: int) -> np.ndarray:
        return self.candidates.ids[self.bounds[m] : self.bounds[m + 1]]

    def bin_of_position(self, pos: int) -> int:
        return int(np.searchsorted(self.bounds, pos, side="right")) - 1


def p_grid(params: CodecParams) -> list[float]:
    n = int(math.floor((params.p_max - params.p_min) / params.grid_step + 1e-9))
    grid = [round(params.p_min + i * params.grid_step, 12) for i in range(n + 1)]
    grid = [p for p in grid if p <= params.p_max]
    if grid[-1] != params.p_max:
        grid.append(params.p_max)
    return grid


def nucleus_size(dist: TokenDistribution, p: float) -> int:
    """Length of the shortest canonical prefix whose mass reaches ``p``."""
    cum = dist.sorted_cumsum
    # searchsorted 'left' finds the first index with cum >= p
    idx = int(np.searchsorted(cum, p, side="left"))
    return min(idx + 1, cum.size)


def adapt_p(dist: TokenDistribution, params: CodecParams) -> float:
    """Smallest grid threshold whose nucleus holds ``min_candidates`` tokens."""
    for p in p_grid(params):
        if nucleus_size(dist, p) >= params.min_candidates:
            return p
    return params.p_max


def dynamic_nucleus(dist: TokenDistribution, p: float) -> Candidates:
    if not 0 < p <= 1:
        raise ValueError(f"p must be in (0, 1], got {p}")
    ids = dist.canonical_order[: nucleus_size(dist, p)]
    base = dist.probs[ids]
    return Candidates(ids, base / base.sum(), base)


def typicality_filter(cands: Candidates, entropy_bits: float, params: CodecParams) -> Candidates:
    if len(cands) == 0:
        raise ValueError("empty candidate set")
    if math.isinf(params.typicality_tau):
        return cands
    deviation = np.abs(-np.log2(cands.base_probs) - entropy_bits)
    keep = deviation <= params.typicality_tau
    n_keep = int(keep.sum())
    if n_keep == len(cands) or n_keep < params.min_candidates:
        return cands
    base = cands.base_probs[keep]
    return Candidates(cands.ids[keep], base / base.sum(), base)


def equal_mass_bins(cands: Candidates, bin_count: int, p_used: float = 1.0, context_hash: int = 0) -> BinLayout:
    """Greedy contiguous split into ``bin_count`` non-empty, near-equal-mass bins."""
    n = len(cands)
    if n < bin_count:
        return BinLayout(p_used, cands, (), (), context_hash, True)
    cum = np.cumsum(cands.probs)
    total = float(cum[-1])
    starts = [0]
    start = 0
    for j in range(bin_count - 1):
        target = total * (j + 1) / bin_count
        end = int(np.searchsorted(cum, target, side="left"))
        # each bin takes at least one token and leaves one for every later bin
        end = min(max(end, start), n - bin_count + j)
        start = end + 1
        starts.append(start)
    bounds = (*starts, n)
    edges = np.concatenate(([0.0], cum))
    masses = tuple(float(edges[bounds[m + 1]] - edges[bounds[m]]) for m in range(bin_count))
    return BinLayout(p_used, cands, bounds, masses, context_hash, False)


def derive_layout(dist: TokenDistribution, params: CodecParams) -> BinLayout:
    p = adapt_p(dist, params)
    cands = typicality_filter(dynamic_nucleus(dist, p), dist.entropy_bits, params)
    return equal_mass_bins(cands, params.bin_count, p, dist.context_hash)


# -- parity -----------------------------------------------------------------


def _parity_prefix(seed: int, context_hash: int) -> int:
    return fnv1a64(u64le(seed) + u64le(context_hash))


def _parity_from_prefix(prefix: int, token_id: int) -> int:
    return fnv1a64(u64le(int(token_id)), prefix) & 1


def parity(token_id: int, context_hash: int, seed: int) -> int:
    """LSB of FNV-1a-64 over (seed, context_hash, token id), each 8 bytes LE."""
    return fnv1a64(u64le(seed) + u64le(context_hash) + u64le(int(token_id))) & 1


def _bin_parities(members: np.ndarray, prefix: int) -> tuple[bool, list[int]]:
    """Whether the bin holds both parity classes, plus the parities computed so far."""
    seen: list[int] = []
    for tok in members:
        seen.append(_parity_from_prefix(prefix, tok))
        if seen[-1] != seen[0]:
            return True, seen
    return False, seen


# -- steps ------------------------------------------------------------------


@dataclass
class StepRecord:
    step_index: int
    kind: StepKind
    token: int
    bin_index: int | None = None
    parity_bit: int | None = None
    bits: str = ""
    bit_offset: int = 0
    p_used: float = 0.0
    n_candidates: int = 0
    boosted: bool = False

    @property
    def bits_consumed(self) -> int:
        return len(self.bits)


def encode_step(layout: BinLayout, bits: BitBuffer, params: CodecParams, step_index: int = 0) -> StepRecord:
    """Consume 0, 5 or 6 bits from ``bits`` and pick the token carrying them.

    Raises :class:`EndOfMessage` if the buffer is already exhausted.
    """
    if bits.exhausted:
        raise EndOfMessage
    cands = layout.candidates
    offset = bits.cursor
    common = dict(step_index=step_index, bit_offset=offset, p_used=layout.p_used, n_candidates=len(cands))
    if layout.degenerate:
        return StepRecord(kind="no-embed", token=int(cands.ids[0]), **common)
    index_group = bits.read_bits(params.index_bits)
    m = bits_to_int(index_group)
    members = layout.bin_ids(m)
    prefix = _parity_prefix(params.seed, layout.context_hash)
    diverse, _ = _bin_parities(members, prefix)
    if not diverse:
        return StepRecord(kind="index-only", token=int(members[0]), bin_index=m, bits=format_bits(index_group), **common)
    # the header/payload may end exactly on the index bits; pad the parity
    b = 0 if bits.exhausted else bits.read_bits(1)[0]
    token = next(int(t) for t in members if _parity_from_prefix(prefix, t) == b)
    return StepRecord(
        kind="full-embed",
        token=token,
        bin_index=m,
        parity_bit=b,
        bits=format_bits(index_group) + str(b),
        **common,
    )


def decode_step(layout: BinLayout, token: int, params: CodecParams, step_index: int | None = None) -> tuple[int, ...]:
    if layout.degenerate:
        return ()
    hits = np.flatnonzero(layout.candidates.ids == token)
    if hits.size == 0:
        raise DesyncError(f"token {token} is outside the candidate set", step_index)
    m = layout.bin_of_position(int(hits[0]))
    group = int_to_bits(m, params.index_bits)
    prefix = _parity_prefix(params.seed, layout.context_hash)
    diverse, _ = _bin_parities(layout.bin_ids(m), prefix)
    if diverse:
        group += (_parity_from_prefix(prefix, token),)
    return group


# -- sentence boundaries ----------------------------------------------------


@dataclass
class BoundaryState:
    tokens_since_boundary: int = 0
    prev_no_embed: bool = False

    @classmethod
    def from_prompt(cls, prompt: Sequence[int], punctuation: frozenset[int]) -> BoundaryState:
        since = 0
        for tok in prompt:
            since = 0 if tok in punctuation else since + 1
        return cls(since)

    def advance(self, token: int, no_embed: bool, punctuation: frozenset[int]) -> None:
        self.tokens_since_boundary = 0 if token in punctuation else self.tokens_since_boundary + 1
        self.prev_no_embed = no_embed

    def active(self, params: CodecParams) -> bool:
        return self.prev_no_embed or self.tokens_since_boundary >= params.sentence_target


def boundary_adjust(
    dist: TokenDistribution, state: BoundaryState, params: CodecParams, force: bool = False
) -> TokenDistribution:
    """Add ``boost_delta`` to the log-probability of sentence-final tokens."""
    if not (force or state.active(params)) or params.boost_delta == 0 or not params.punctuation:
        return dist
    probs = np.array(dist.probs)
    idx = np.fromiter(sorted(params.punctuation), dtype=np.int64)
    probs[idx] *= math.exp(params.boost_delta)
    return TokenDistribution(probs / probs.sum(), dist.context_hash)


# -- whole messages ---------------------------------------------------------


def check_tag(secret: bytes, seed: int, nbits: int) -> tuple[int, ...]:
    if nbits == 0:
        return ()
    h = fnv1a64(b"autostega-check" + u64le(seed) + u64le(len(secret)) + secret)
    return int_to_bits(h & ((1 << nbits) - 1), nbits)


@dataclass
class EncodeResult:
    prompt: list[int]
    tokens: list[int]
    steps: list[StepRecord]
    closure_tokens: int
    closure_terminated: bool
    payload_bits: int

    @property
    def embed_steps(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        return {
            "prompt": self.prompt,
            "tokens": self.tokens,
            "payload_bits": self.payload_bits,
            "closure_tokens": self.closure_tokens,
            "closure_terminated": self.closure_terminated,
            "steps": [asdict(s) for s in self.steps],
        }

    def step_log_json(self) -> str:
        return json.dumps([asdict(s) for s in self.steps], indent=1)


def encode(secret: bytes, prompt: Sequence[int], model: LanguageModel, params: CodecParams) -> EncodeResult:
    model.vocab.check_ids(prompt)
    buf = frame(secret, check_tag(secret, params.seed, params.check_bits))
    ctx = TokenContext(prompt)
    state = BoundaryState.from_prompt(prompt, params.punctuation)
    tokens: list[int] = []
    steps: list[StepRecord] = []
    idle = 0
    while not buf.exhausted:
        boosted = state.active(params)
        dist = boundary_adjust(model.next_token_distribution(ctx), state, params)
        layout = derive_layout(dist, params)
        rec = encode_step(layout, buf, params, len(steps))
        rec.boosted = boosted
        steps.append(rec)
        tokens.append(rec.token)
        ctx.push(rec.token)
        no_embed = rec.kind == "no-embed"
        state.advance(rec.token, no_embed, params.punctuation)
        idle = idle + 1 if no_embed else 0
        if idle >= MAX_IDLE_STEPS:
            raise DataError(f"{idle} consecutive zero-capacity steps; the model cannot carry the payload")

    closure, terminated = 0, not params.punctuation or (bool(tokens) and tokens[-1] in params.punctuation)
    while not terminated and closure < params.closure_budget:
        dist = boundary_adjust(model.next_token_distribution(ctx), state, params, force=True)
        tok = int(dist.canonical_order[0])
        tokens.append(tok)
        ctx.push(tok)
        state.advance(tok, False, params.punctuation)
        closure += 1
        terminated = tok in params.punctuation
    if not terminated:
        logger.warning("closure did not reach a sentence boundary within %d steps", params.closure_budget)
    return EncodeResult(list(prompt), tokens, steps, closure, terminated, len(secret) * 8)


def decode(stego: Sequence[int], prompt: Sequence[int], model: LanguageModel, params: CodecParams) -> bytes:
    """Replay the shared derivation over ``stego`` and return the framed secret."""
    vocab = model.vocab
    vocab.check_ids(prompt)
    ctx = TokenContext(prompt)
    state = BoundaryState.from_prompt(prompt, params.punctuation)
    bits: list[int] = []
    needed: int | None = None
    for i, tok in enumerate(stego):
        if not (isinstance(tok, (int, np.integer)) and 0 <= tok < len(vocab)):
            raise DesyncError(f"token {tok!r} is outside the model vocabulary", i)
        dist = boundary_adjust(model.next_token_distribution(ctx), state, params)
        layout = derive_layout(dist, params)
        bits.extend(decode_step(layout, int(tok), params, i))
        if needed is None and len(bits) >= HEADER_BITS:
            needed = HEADER_BITS + bits_to_int(bits[:HEADER_BITS]) + params.check_bits
            if (needed - HEADER_BITS - params.check_bits) % 8:
                raise IntegrityError(f"header declares {needed - HEADER_BITS - params.check_bits} payload bits, not whole bytes")
        if needed is not None and len(bits) >= needed:
            return _unframe(bits[:needed], params)
        ctx.push(int(tok))
        state.advance(int(tok), layout.degenerate, params.punctuation)
    if needed is None:
        raise IncompletePayloadError(HEADER_BITS - len(bits), "length header incomplete")
    raise IncompletePayloadError(needed - len(bits))


def _unframe(bits: list[int], params: CodecParams) -> bytes:
    end = len(bits) - params.check_bits
    secret = bits_to_bytes(bits[HEADER_BITS:end])
    if tuple(bits[end:]) != check_tag(secret, params.seed, params.check_bits):
        raise IntegrityError("integrity tag mismatch (wrong seed, model, prompt or parameters)")
    return secret


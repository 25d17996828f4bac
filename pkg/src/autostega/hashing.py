"""FNV-1a 64-bit hashing shared by both ends of the codec."""

from __future__ import annotations

from collections.abc import Iterable

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes, state: int = FNV_OFFSET) -> int:
    h = state
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & MASK64
    return h


def u64le(value: int) -> bytes:
    return (value & MASK64).to_bytes(8, "little")


def extend_context_hash(state: int, token_id: int) -> int:
    """Fold one token id (8 bytes, little-endian) into a rolling context hash."""
    return fnv1a64(u64le(token_id), state)


def context_hash(token_ids: Iterable[int]) -> int:
    h = FNV_OFFSET
    for token_id in token_ids:
        h = extend_context_hash(h, token_id)
    return h

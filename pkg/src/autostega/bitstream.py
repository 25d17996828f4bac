"""Bit-level payload framing with cursor reads and deferral.

A framed payload is a 32-bit big-endian bit count followed by the payload
bits, most significant bit first within each byte.  An optional trailer
(used by the codec for a keyed integrity tag) follows the payload.
"""

from __future__ import annotations

from collections import deque
from collections.abc import Iterable, Sequence

HEADER_BITS = 32
MAX_PAYLOAD_BITS = 2**HEADER_BITS - 1

Bits = tuple[int, ...]


class CapacityError(ValueError):
    """Payload does not fit the 32-bit length header."""


class EndOfMessage(Exception):
    """Raised by :meth:`BitBuffer.read_bits` once every bit has been read.

    Not an error: the encoder treats it as the signal to start closure.
    """


def bytes_to_bits(data: bytes) -> Bits:
    return tuple((byte >> shift) & 1 for byte in data for shift in range(7, -1, -1))


def bits_to_bytes(bits: Sequence[int]) -> bytes:
    if len(bits) % 8:
        raise ValueError(f"bit count {len(bits)} is not a multiple of 8")
    out = bytearray()
    for i in range(0, len(bits), 8):
        value = 0
        for bit in bits[i : i + 8]:
            value = (value << 1) | bit
        out.append(value)
    return bytes(out)


def int_to_bits(value: int, width: int) -> Bits:
    return tuple((value >> shift) & 1 for shift in range(width - 1, -1, -1))


def bits_to_int(bits: Iterable[int]) -> int:
    value = 0
    for bit in bits:
        value = (value << 1) | bit
    return value


def parse_bits(text: str) -> Bits:
    """Parse a ``"0101"`` string, ignoring whitespace."""
    cleaned = "".join(text.split())
    if not cleaned or set(cleaned) - {"0", "1"}:
        raise ValueError(f"not a bitstring: {text[:40]!r}")
    return tuple(int(c) for c in cleaned)


def format_bits(bits: Iterable[int]) -> str:
    return "".join(str(b) for b in bits)


class BitBuffer:
    """Framed bit stream with a read cursor and a FIFO of deferred bits."""

    def __init__(
        self,
        payload_bits: Sequence[int],
        trailer_bits: Sequence[int] = (),
    ) -> None:
        if len(payload_bits) > MAX_PAYLOAD_BITS:
            raise CapacityError(
                f"payload of {len(payload_bits)} bits exceeds the {HEADER_BITS}-bit header"
            )
        if any(b not in (0, 1) for b in payload_bits) or any(b not in (0, 1) for b in trailer_bits):
            raise ValueError("bits must be 0 or 1")
        self.payload_bits: Bits = tuple(payload_bits)
        self.header_bits: Bits = int_to_bits(len(self.payload_bits), HEADER_BITS)
        self.trailer_bits: Bits = tuple(trailer_bits)
        self._stream: Bits = self.header_bits + self.payload_bits + self.trailer_bits
        self.cursor = 0
        self.deferred: deque[int] = deque()
        self.padded = 0
        # where the next deferred group goes; groups deferred since the last
        # read precede older deferred bits and keep their call order
        self._defer_at = 0

    def __len__(self) -> int:
        return len(self._stream)

    @property
    def remaining(self) -> int:
        return len(self._stream) - self.cursor + len(self.deferred)

    @property
    def exhausted(self) -> bool:
        return not self.deferred and self.cursor >= len(self._stream)

    @property
    def stream(self) -> Bits:
        return self._stream

    def read_bits(self, n: int) -> Bits:
        """Pop ``n`` bits, deferred bits first; zero-pad a short final read."""
        if n < 1:
            raise ValueError("n must be positive")
        if self.exhausted:
            raise EndOfMessage
        self._defer_at = 0
        out: list[int] = []
        while self.deferred and len(out) < n:
            out.append(self.deferred.popleft())
        take = min(n - len(out), len(self._stream) - self.cursor)
        out.extend(self._stream[self.cursor : self.cursor + take])
        self.cursor += take
        if len(out) < n:
            self.padded += n - len(out)
            out.extend([0] * (n - len(out)))
        return tuple(out)

    def defer_bits(self, group: Sequence[int]) -> None:
        """Push ``group`` back so the next reads return it first, in order."""
        for bit in group:
            self.deferred.insert(self._defer_at, bit)
            self._defer_at += 1

    def __repr__(self) -> str:
        return (
            f"BitBuffer(payload={len(self.payload_bits)} bits, cursor={self.cursor}/"
            f"{len(self._stream)}, deferred={len(self.deferred)})"
        )


def frame(secret: bytes, trailer_bits: Sequence[int] = ()) -> BitBuffer:
    """Frame ``secret`` behind its 32-bit big-endian bit length."""
    if len(secret) * 8 > MAX_PAYLOAD_BITS:
        raise CapacityError(f"secret of {len(secret)} bytes exceeds framing capacity")
    return BitBuffer(bytes_to_bits(secret), trailer_bits)

"""Exception hierarchy.  Each family maps to one CLI exit code."""

from __future__ import annotations


class StegaError(Exception):
    exit_code = 1


class ConfigError(StegaError, ValueError):
    """Invalid configuration, parameters or missing artifacts."""

    exit_code = 2


class DataError(StegaError, ValueError):
    """Input data that cannot be processed (bad tokens, corrupt files, ...)."""

    exit_code = 3


class DesyncError(DataError):
    """Encoder and decoder state diverged (seed, model, prompt or params)."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message if step is None else f"step {step}: {message}")
        self.step = step


class IncompletePayloadError(DataError):
    def __init__(self, missing_bits: int, detail: str = "") -> None:
        msg = f"stego ended {missing_bits} bits short of the framed payload"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.missing_bits = missing_bits


class IntegrityError(DataError):
    """Decoded bits fail the keyed integrity check."""


class ParseError(DataError):
    """An LLM response or stored record does not follow its contract."""

    def __init__(self, message: str, raw: str | None = None) -> None:
        super().__init__(message)
        self.raw = raw


class TransportError(StegaError):
    """A remote model, embedder or LLM endpoint failed."""

    exit_code = 4

    def __init__(self, message: str, attempts: int = 1, status: int | None = None) -> None:
        super().__init__(f"{message} (attempts={attempts}, status={status})")
        self.attempts = attempts
        self.status = status

"""Generative text steganography with an equal-mass binned codec and a strategy-learning agent loop."""

from __future__ import annotations

from .codec import CodecParams, decode, encode
from .errors import ConfigError, DataError, DesyncError, IntegrityError, StegaError, TransportError
from .lm import NgramModel, UniformModel, Vocabulary, train_ngram

__version__ = "0.1.0"

__all__ = [
    "CodecParams",
    "ConfigError",
    "DataError",
    "DesyncError",
    "IntegrityError",
    "NgramModel",
    "StegaError",
    "TransportError",
    "UniformModel",
    "Vocabulary",
    "decode",
    "encode",
    "train_ngram",
]

from __future__ import annotations

from .clients import HttpChatClient, MockClient, RoleSet, ScenarioError
from .loop import (
    AgentContext,
    Evaluator,
    Ledger,
    LifelongSession,
    ModeChoice,
    Request,
    StegoRecord,
    decode_secret,
    evaluate_request,
    generate_stego,
    select_mode,
    summarize,
    warmup,
)

__all__ = [
    "AgentContext",
    "Evaluator",
    "HttpChatClient",
    "Ledger",
    "LifelongSession",
    "MockClient",
    "ModeChoice",
    "Request",
    "RoleSet",
    "ScenarioError",
    "StegoRecord",
    "decode_secret",
    "evaluate_request",
    "generate_stego",
    "select_mode",
    "summarize",
    "warmup",
]

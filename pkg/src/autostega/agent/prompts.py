"""Prompt templates for the steganography, scorer, summarizer and decoder roles."""

from __future__ import annotations

import json
from collections.abc import Mapping, Sequence
from functools import cache
from importlib import resources

from ..library import StrategyEntry

START_MARKER = "[START STEGO TEXT]"
END_MARKER = "[END STEGO TEXT]"
SINGLE_HEADER = "Please use the following steganography strategy:\n"
MULTI_HEADER = "Please combine the following strategies:\n"


@cache
def template(name: str) -> str:
    return resources.files("autostega.data.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def strategy_header_single(name: str, definition: str, technique: str, example: str) -> str:
    return (
        SINGLE_HEADER
        + f"Strategy Name: {name}\n"
        + f"Definition: {definition}\n"
        + f"Technique: {technique}\n"
        + f"Example: {example}"
    )


def strategy_header_multi(items: Sequence[Mapping[str, str]]) -> str:
    lines = [
        f"- {s.get('Strategy', 'unknown')} ({s.get('Technique', 'unknown')})\n"
        f"  Definition: {s.get('Definition', '')}"
        for s in items
    ]
    return MULTI_HEADER + "\n".join(lines)


def describe_strategies(entries: Sequence[StrategyEntry]) -> str:
    if len(entries) == 1:
        e = entries[0]
        best = e.best_example
        return strategy_header_single(e.name, e.definition, ", ".join(e.technique), best.stego_excerpt if best else "")
    ordered = sorted(entries, key=lambda e: (e.id is None, e.id or 0))
    return strategy_header_multi(
        [{"Strategy": e.name, "Technique": ", ".join(e.technique), "Definition": e.definition} for e in ordered]
    )


def generation_prompt(secret_bits: str, cover_text: str, entries: Sequence[StrategyEntry] = (), method_line: str = "") -> str:
    if not entries:
        return template("warmup").format(secret=secret_bits, cover_stub=cover_text, method_line=method_line)
    return template("with_strategy").format(
        secret=secret_bits,
        cover_stub=cover_text,
        strategies_desc=describe_strategies(entries),
        method_line=method_line,
    )


def summarizer_input(records: Sequence[Mapping], cover_text: str) -> str:
    """Inputs for the summarizer; secrets are never included."""
    payload = {
        "cover_text": cover_text,
        "records": [
            {
                "iteration": r["iteration"],
                "stego_text": r["stego_text"],
                "evaluation": r["evaluation"],
                "used_strategies": r["used_strategies"],
            }
            for r in records
        ],
    }
    return json.dumps(payload, ensure_ascii=False, indent=1)


def scorer_prompt(stego_text: str, cover_text: str, metrics: Mapping, requirements: str) -> str:
    return template("scorer").format(
        metrics=json.dumps(dict(metrics), sort_keys=True),
        cover_text=cover_text,
        stego_text=stego_text,
        requirements=requirements or "(none)",
    )


def decoder_prompt(stego_text: str, entry: StrategyEntry) -> str:
    return template("decoder").format(
        name=entry.name,
        definition=entry.definition,
        technique=", ".join(entry.technique),
        stego_text=stego_text,
    )

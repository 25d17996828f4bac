"""Deterministic synthetic English-like corpus for desk-scale models."""

from __future__ import annotations

import random

DETERMINERS = "the a this that every some each another my our their your".split()
ADJECTIVES = (
    "big small old new quiet bright dark early late quick slow warm cold green red "
    "local public private simple strange gentle heavy light busy empty full rich poor "
    "young ancient modern rural urban careful honest famous distant nearby sudden"
).split()
NOUNS = (
    "city river market teacher student farmer doctor engineer report policy company "
    "village garden road bridge station council school museum forest storm season "
    "harvest budget project plan team player coach game match film story book song "
    "artist writer letter window door kitchen table morning evening night week year "
    "price market system network signal model data result study test question answer "
    "idea problem method energy water fire stone field hill valley island ocean ship "
    "train car bike street park festival crowd voice silence memory dream journey"
).split()
VERBS = (
    "sees builds finds keeps opens closes carries moves writes reads shows takes "
    "makes brings leaves holds watches follows changes joins starts ends helps needs "
    "likes loves fears wants meets visits crosses improves reports studies explains"
).split()
ADVERBS = "quietly quickly slowly often rarely soon again still almost nearly always never".split()
PREPOSITIONS = "in on near under over across beside behind through after before with".split()
CONJUNCTIONS = "and but while because although so".split()
PUNCT = [".", ".", ".", "!", "?"]


def _zipf_choice(rng: random.Random, words: list[str], s: float = 1.1) -> str:
    weights = [1.0 / (i + 1) ** s for i in range(len(words))]
    return rng.choices(words, weights)[0]


def _noun_phrase(rng: random.Random) -> list[str]:
    out = [_zipf_choice(rng, DETERMINERS)]
    if rng.random() < 0.5:
        out.append(_zipf_choice(rng, ADJECTIVES))
    out.append(_zipf_choice(rng, NOUNS))
    if rng.random() < 0.25:
        out += [_zipf_choice(rng, PREPOSITIONS), *_noun_phrase(rng)[:3]]
    return out


def _clause(rng: random.Random) -> list[str]:
    out = _noun_phrase(rng)
    if rng.random() < 0.2:
        out.append(_zipf_choice(rng, ADVERBS))
    out.append(_zipf_choice(rng, VERBS))
    out += _noun_phrase(rng)
    if rng.random() < 0.3:
        out += [_zipf_choice(rng, PREPOSITIONS), *_noun_phrase(rng)]
    return out


def sentence(rng: random.Random) -> list[str]:
    words = _clause(rng)
    if rng.random() < 0.3:
        words += [_zipf_choice(rng, CONJUNCTIONS), *_clause(rng)]
    words.append(rng.choice(PUNCT))
    return words


def synthetic_corpus(n_words: int, seed: int = 0, line_per_sentence: bool = True) -> str:
    """At least ``n_words`` whitespace tokens, one sentence per line."""
    rng = random.Random(seed)
    lines: list[str] = []
    total = 0
    while total < n_words:
        words = sentence(rng)
        total += len(words)
        lines.append(" ".join(words))
    return ("\n" if line_per_sentence else " ").join(lines) + "\n"

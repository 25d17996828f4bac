from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from autostega.agent import AgentContext, Evaluator, Ledger, Request, RoleSet

from autostega.codec import Candidates
from autostega.corpus import synthetic_corpus
from autostega.library import StrategyLibrary
from autostega.lm import NgramModel, train_ngram
from autostega.metrics import HashedTfEmbedder


@pytest.fixture(scope="session")
def corpus_text() -> str:
    return synthetic_corpus(60_000, seed=0)


@pytest.fixture(scope="session")
def bigram_model(corpus_text):
    """Builtin order-2 model on a >= 50k-word synthetic corpus."""
    return train_ngram(corpus_text, order=2, alpha=0.1)


def make_candidates(probs, ids=None) -> Candidates:
    probs = np.asarray(probs, dtype=np.float64)
    probs = probs / probs.sum()
    ids = np.arange(probs.size) if ids is None else np.asarray(ids)
    return Candidates(ids, probs, probs)


SCENARIO = Path(str(resources.files("autostega.data") / "scenario"))
CLOCK = "2025-01-01T00:00:00+00:00"


@pytest.fixture(scope="session")
def scenario_model():
    return NgramModel.load(SCENARIO / "model.json")


@pytest.fixture(scope="session")
def scenario_request():
    doc = json.loads((SCENARIO / "requests.json").read_text())[0]
    return Request.from_json(doc, 5, 8.5)


def scenario_context(client, model, with_library: bool = True) -> AgentContext:
    """Context wired like the shipped scenario config, around ``client``."""
    embedder = HashedTfEmbedder(256)
    if with_library:
        lib = StrategyLibrary.load(SCENARIO / "library.jsonl", clock=lambda: CLOCK)
    else:
        lib = StrategyLibrary(256, embedder.tag, clock=lambda: CLOCK)
    roles = RoleSet.shared(client)
    return AgentContext(roles, Evaluator(model, embedder, roles=roles), lib, Ledger())


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)

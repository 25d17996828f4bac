"""Regenerate the shipped strategy seeds and the hermetic mock scenario.

Run from the repository root:  python3 scripts/make_scenario.py
The golden ledgers are produced by replaying the transcripts once; tests
then require byte-identical replays.
"""

from __future__ import annotations

import json
from pathlib import Path

from autostega.agent import AgentContext, Evaluator, Ledger, LifelongSession, MockClient, Request, RoleSet, warmup
from autostega.cli import import_entries
from autostega.corpus import synthetic_corpus
from autostega.library import StrategyLibrary
from autostega.lm import train_ngram
from autostega.metrics import HashedTfEmbedder

DATA = Path(__file__).resolve().parents[1] / "src" / "autostega" / "data"
SCENARIO = DATA / "scenario"
CLOCK = "2025-01-01T00:00:00+00:00"
DIMS = ("efficiency", "fluency", "semantic", "security")


def scores(*values: float) -> dict[str, float]:
    return dict(zip(DIMS, values))


def entry(name, definition, technique, scenarios, traits, excerpt, dim_scores) -> dict:
    overall = sum(dim_scores.values()) / len(dim_scores)
    return {
        "name": name,
        "definition": definition,
        "technique": technique,
        "applicable_scenarios": scenarios,
        "characteristics": traits,
        "examples": [{"stego_excerpt": excerpt, "overall_score": overall, "scores": dim_scores}],
    }


SEEDS = [
    entry(
        "Thematic Domain Diversification with Consistent Transitional Enc",
        "Blend meaning-preserving paraphrase with light rewording so surface statistics stay smooth; "
        "capacity is traded for robustness to back-translation.",
        ["semantic"],
        ["robustness", "low detectability (LLM)"],
        ["semantic preservation", "back-translation robust", "hard for detectors"],
        "Quantum computing will usher in a new era of finance, helping firms optimize trading strategies "
        "by processing market data at scale.",
        scores(7.0, 6.0, 6.0, 5.5),
    ),
    entry(
        "Domain-Specific Semantic Precision with Transitional Depth",
        "Non-generic domain elaborations joined by consistent transitional phrases; the choice of transition "
        "carries the bits while topical depth keeps the text natural.",
        ["context-aware semantic embedding"],
        ["general"],
        ["data-driven", "non-generic", "varied transitions"],
        "Moreover, the implementation of quantum-resistant cryptographic algorithms requires a careful "
        "evaluation of lattice-based schemes.",
        scores(8.0, 7.5, 7.5, 7.5),
    ),
    entry(
        "Domain-Specific Semantic Depth with Multi-Domain Redundancy",
        "Consistent transitions carry the bits inside rich, domain-adapted elaborations spread over several "
        "domains; paragraph-level redundancy adds error tolerance without generic phrasing.",
        ["context-aware semantic embedding"],
        ["general"],
        ["data-driven", "semantic depth", "redundancy", "low detectability"],
        "Moreover, in smart grid management, advanced metering enables real-time demand response, "
        "enhancing grid stability across regions.",
        scores(9.5, 9.0, 8.5, 9.0),
    ),
]

LIBRARY_SEEDS = [
    entry(
        "Cover-Conditioned Continuation with Synonym Channels",
        "Continue the cover text in its own register and pick between synonym pairs so that each pair "
        "position carries one bit.",
        ["cover-conditioned continuation", "synonym pair substitution"],
        ["news-style paragraphs", "receiver knows cover"],
        ["capacity near 1 bit per pair", "high fluency", "needs shared synonym list"],
        "Officials said the plan would begin soon, and residents were told the work could start quickly.",
        scores(9.5, 9.0, 8.5, 8.5),
    ),
    entry(
        "Sentence-Initial Transition Bit Mapping",
        "Every sentence opens with a transition word drawn from one of two fixed lists, so the list "
        "membership of each opener encodes one bit.",
        ["transition-word bit mapping", "sentence-level encoding"],
        ["multi-sentence reports", "low detectability requirement"],
        ["low capacity", "robust to light editing", "depends on sentence count"],
        "However, the council met again. Furthermore, the budget was approved before noon.",
        scores(6.5, 9.0, 9.0, 9.5),
    ),
]

COVER = (
    "City officials announced a new plan to expand public transport across the region. "
    "The project will add bus lanes and upgrade several stations over the next two years."
)
SECRET_HEX = "6869"

STEGO = [
    "City officials announced a plan to grow public transport in the region. Buses and trains will get new "
    "lanes, new stations and more staff over two years, and the council said work starts in spring.",
    "City officials unveiled a plan to widen public transport across the region. The project adds bus lanes, "
    "renovates several stations and, officials said, should finish within two years.",
    "Moreover, city officials announced a regional plan to expand public transport. In urban mobility, "
    "dedicated bus lanes enable faster commutes, while upgraded stations improve access and, across the "
    "next two years, strengthen the network.",
]
RATIONALES = [
    "Capacity is fine but the wording drifts from the cover and the added staffing detail looks inserted.",
    "Closer to the cover with smoother phrasing; transitions still feel generic and slightly detectable.",
    "Rich domain detail with consistent transitions keeps the text natural and close to the cover.",
]
SCORES = [scores(7.0, 6.0, 6.0, 5.5), scores(8.0, 7.5, 7.5, 7.5), scores(9.5, 9.0, 8.5, 9.0)]


def wrap(text: str) -> str:
    return f"[START STEGO TEXT]\n{text}\n[END STEGO TEXT]"


def scorer_reply(i: int) -> str:
    return json.dumps({"scores": SCORES[i], "rationale": RATIONALES[i]})


def summary_reply(doc: dict, excerpt: str) -> str:
    out = dict(doc)
    out["examples"] = [dict(doc["examples"][0], stego_excerpt=excerpt)]
    return json.dumps(out)


NO_HEADER = ["Please use the following", "Please combine the following"]


def lifelong_turns() -> list[dict]:
    e1, e2 = LIBRARY_SEEDS
    return [
        {"role": "steganography", "response": wrap(STEGO[0]), "expect": [COVER], "reject": NO_HEADER},
        {"role": "scorer", "response": scorer_reply(0)},
        {
            "role": "steganography",
            "response": wrap(STEGO[1]),
            "expect": ["Please use the following steganography strategy", e1["name"]],
        },
        {"role": "scorer", "response": scorer_reply(1)},
        {"role": "summarizer", "response": summary_reply(SEEDS[1], STEGO[1][:120])},
        {
            "role": "steganography",
            "response": wrap(STEGO[2]),
            "expect": ["Please combine the following strategies", f"- {e1['name']}", f"- {e2['name']}"],
        },
        {"role": "scorer", "response": scorer_reply(2)},
        {"role": "summarizer", "response": summary_reply(SEEDS[2], STEGO[2][:120])},
        {"role": "decoder", "response": "0110 1000\n0110 1001\n", "expect": [SEEDS[2]["name"]]},
    ]


def warmup_turns() -> list[dict]:
    turns = []
    for i in range(3):
        turns.append({"role": "steganography", "response": wrap(STEGO[i]), "reject": NO_HEADER})
        turns.append({"role": "scorer", "response": scorer_reply(i)})
        if i:
            turns.append({"role": "summarizer", "response": summary_reply(SEEDS[i], STEGO[i][:120])})
    return turns


def dump(path: Path, doc: object) -> None:
    path.write_text(json.dumps(doc, ensure_ascii=False, indent=1) + "\n", encoding="utf-8")


def main() -> None:
    SCENARIO.mkdir(parents=True, exist_ok=True)
    dump(DATA / "seed_strategies.json", SEEDS)

    corpus = synthetic_corpus(4000, seed=7) + "\n".join([COVER, *STEGO]) + "\n"
    model = train_ngram(corpus, order=1, alpha=0.5, unk=True)
    model.save(SCENARIO / "model.json")

    embedder = HashedTfEmbedder(256)
    lib = StrategyLibrary(256, embedder.tag, clock=lambda: CLOCK)
    import_entries(lib, LIBRARY_SEEDS, embedder)
    lib.save(SCENARIO / "library.jsonl")

    dump(SCENARIO / "requests.json", [{"cover_text": COVER, "secret_hex": SECRET_HEX, "requirements": "keep the news register"}])
    dump(SCENARIO / "transcript.json", {"turns": lifelong_turns()})
    dump(SCENARIO / "warmup_transcript.json", {"turns": warmup_turns()})
    dump(
        SCENARIO / "config.json",
        {
            "metrics": {"model": "model.json", "threshold": 8.5, "embed_dim": 256},
            "library": {"path": "library.jsonl", "fixed_clock": CLOCK},
            "budgets": {"warmup": 3, "runtime": 5, "k": 3, "gamma": 0.5},
        },
    )

    request = Request.from_json(json.loads((SCENARIO / "requests.json").read_text())[0], 5, 8.5)

    ctx = _context(lib_path=SCENARIO / "library.jsonl", transcript=SCENARIO / "transcript.json", model=model)
    LifelongSession(ctx, request).run()
    ctx.ledger.save(SCENARIO / "ledger.golden.jsonl")

    ctx = _context(lib_path=None, transcript=SCENARIO / "warmup_transcript.json", model=model)
    warmup(ctx, [request], 3)
    ctx.ledger.save(SCENARIO / "warmup_ledger.golden.jsonl")


def _context(lib_path: Path | None, transcript: Path, model) -> AgentContext:
    embedder = HashedTfEmbedder(256)
    if lib_path is None:
        lib = StrategyLibrary(256, embedder.tag, clock=lambda: CLOCK)
    else:
        lib = StrategyLibrary.load(lib_path, clock=lambda: CLOCK)
    roles = RoleSet.shared(MockClient.load(transcript))
    return AgentContext(roles, Evaluator(model, embedder, roles=roles), lib, Ledger())


if __name__ == "__main__":
    main()

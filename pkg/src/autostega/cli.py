"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 data or desynchronization
error, 4 transport error.  Machine-readable JSON goes to stdout and all
diagnostics go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from . import codec
from .agent import AgentContext, Evaluator, Ledger, LifelongSession, MockClient, Request, RoleSet, warmup
from .agent.clients import HttpChatClient, LlmClient
from .config import Config, load_config
from .corpus import synthetic_corpus
from .errors import ConfigError, DataError, StegaError
from .library import StrategyEntry, StrategyLibrary, write_atomic
from .lm import NgramModel, train_ngram
from .metrics import BaselineDetector, Embedder, HashedTfEmbedder, RemoteEmbedder, aggregate_score, compute_report
from .metrics import IncompleteReportError

logger = logging.getLogger("autostega")

STEGO_FORMAT = "autostega-stego"


def emit(doc: object) -> None:
    sys.stdout.write(json.dumps(doc, ensure_ascii=False, indent=1) + "\n")


def read_text(path: str | Path, what: str) -> str:
    try:
        return Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"{what} not found: {path}") from None


def read_json(path: str | Path, what: str) -> object:
    text = read_text(path, what)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"{what} {path} is not valid JSON: {exc.msg}") from None


def load_model(args: argparse.Namespace, cfg: Config) -> NgramModel:
    path = args.model or cfg.metrics.model
    if not path:
        raise ConfigError("no model given (use --model or metrics.model)")
    return NgramModel.load(path)


def make_embedder(cfg: Config) -> Embedder:
    if cfg.metrics.embedder_url:
        return RemoteEmbedder(cfg.metrics.embedder_url, cfg.metrics.embed_dim, cfg.metrics.embedder_tag)
    return HashedTfEmbedder(cfg.metrics.embed_dim)


def make_detector(cfg: Config) -> BaselineDetector | None:
    if not cfg.metrics.detector_covers:
        return None
    covers = [line for line in read_text(cfg.metrics.detector_covers, "detector covers").splitlines() if line.strip()]
    return BaselineDetector(covers)


def library_path(args: argparse.Namespace, cfg: Config) -> Path:
    path = args.library or cfg.library.path
    if not path:
        raise ConfigError("no library given (use --library or library.path)")
    return Path(path)


def open_library(path: Path, cfg: Config, create: bool = False) -> StrategyLibrary:
    clock_kw = {"clock": (lambda: cfg.library.fixed_clock)} if cfg.library.fixed_clock else {}
    if not path.exists():
        if not create:
            raise ConfigError(f"library not found: {path}")
        return StrategyLibrary(cfg.metrics.embed_dim, make_embedder(cfg).tag, cfg.library.dedup_threshold, **clock_kw)
    lib = StrategyLibrary.load(path, cfg.library.dedup_threshold, **clock_kw)
    if lib.embed_dim != cfg.metrics.embed_dim:
        raise ConfigError(f"library embed_dim {lib.embed_dim} differs from metrics.embed_dim {cfg.metrics.embed_dim}")
    return lib


# -- codec commands -------------------------------------------------------------


def cmd_corpus(args: argparse.Namespace, cfg: Config) -> dict:
    text = synthetic_corpus(args.words, seed=args.seed if args.seed is not None else 0)
    write_atomic(Path(args.out), text)
    return {"out": args.out, "words": len(text.split())}


def cmd_train(args: argparse.Namespace, cfg: Config) -> dict:
    model = train_ngram(read_text(args.corpus, "corpus"), args.order, args.alpha, unk=args.unk)
    model.save(args.out)
    return {"out": args.out, "vocab_size": len(model.vocab), "order": model.order}


def read_secret(args: argparse.Namespace) -> bytes:
    if args.secret_hex is not None:
        try:
            return bytes.fromhex(args.secret_hex)
        except ValueError:
            raise DataError("--secret-hex is not valid hex") from None
    if args.secret is None:
        raise ConfigError("encode needs --secret FILE or --secret-hex HEX")
    if args.secret == "-":
        return sys.stdin.buffer.read()
    try:
        return Path(args.secret).read_bytes()
    except FileNotFoundError:
        raise ConfigError(f"secret file not found: {args.secret}") from None


def cmd_encode(args: argparse.Namespace, cfg: Config) -> dict:
    # parameters are validated before any model is touched
    cfg.codec.params(seed=args.seed)
    secret = read_secret(args)
    model = load_model(args, cfg)
    params = cfg.codec.params(model.vocab, seed=args.seed)
    prompt = model.vocab.tokenize(args.prompt or "")
    result = codec.encode(secret, prompt, model, params)
    doc = {
        "format": STEGO_FORMAT,
        "prompt": result.prompt,
        "tokens": result.tokens,
        "text": model.vocab.detokenize(result.tokens),
    }
    summary = {
        "tokens": len(result.tokens),
        "payload_bits": result.payload_bits,
        "embed_steps": result.embed_steps,
        "closure_tokens": result.closure_tokens,
        "closure_terminated": result.closure_terminated,
    }
    if args.step_log:
        write_atomic(Path(args.step_log), result.step_log_json() + "\n")
    if not args.out:
        return {**doc, **summary}
    write_atomic(Path(args.out), json.dumps(doc) + "\n")
    return {"out": args.out, **summary}


def cmd_decode(args: argparse.Namespace, cfg: Config) -> dict:
    cfg.codec.params(seed=args.seed)
    doc = read_json(args.stego, "stego file")
    if not isinstance(doc, dict) or doc.get("format") != STEGO_FORMAT or not isinstance(doc.get("tokens"), list):
        raise DataError(f"{args.stego} is not a stego token file")
    model = load_model(args, cfg)
    params = cfg.codec.params(model.vocab, seed=args.seed)
    prompt = model.vocab.tokenize(args.prompt) if args.prompt is not None else doc.get("prompt", [])
    secret = codec.decode(doc["tokens"], prompt, model, params)
    if args.out:
        Path(args.out).write_bytes(secret)
    return {"out": args.out, "bytes": len(secret), "hex": secret.hex()}


def stego_text_of(path: str) -> str:
    text = read_text(path, "stego file")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        return text
    if isinstance(doc, dict) and doc.get("format") == STEGO_FORMAT:
        return doc.get("text", "")
    return text


def cmd_eval(args: argparse.Namespace, cfg: Config) -> dict:
    model = load_model(args, cfg)
    stego = stego_text_of(args.stego)
    cover = read_text(args.cover, "cover text")
    detector = make_detector(cfg)
    report = compute_report(stego, cover, args.payload_bits, model, make_embedder(cfg), detector)
    dims = cfg.metrics.build_dimensions()
    if detector is None:
        dims = {k: d for k, d in dims.items() if d.metric != "detector"}
    try:
        aggregate_score(report, dims)
    except IncompleteReportError as exc:
        logger.warning("%s; overall score withheld", exc)
    out = report.to_json()
    out["threshold"] = cfg.metrics.threshold
    out["accepted"] = report.overall is not None and report.overall >= cfg.metrics.threshold
    if args.out:
        write_atomic(Path(args.out), json.dumps(out, indent=1) + "\n")
    return out


# -- library commands -----------------------------------------------------------


def entry_row(entry: StrategyEntry) -> dict:
    return {"id": entry.id, "name": entry.name, "best_score": entry.best_score, "admitted_at": entry.admitted_at}


def import_entries(lib: StrategyLibrary, docs: Sequence[dict], embedder: Embedder) -> list[int]:
    """Add curated entries without the admission gate.

    Entries lacking a retrieval key are keyed on their definition; entries
    lacking recorded metrics take their best example's scores.
    """
    ids = []
    for doc in docs:
        if not isinstance(doc, dict):
            raise DataError("library import expects an array of entry objects")
        entry = StrategyEntry.from_json({**doc, "id": None})
        if entry.key is None:
            entry.key = embedder.embed([entry.definition or entry.name])[0]
        if not entry.recorded_metrics and entry.best_example is not None:
            entry.recorded_metrics = dict(entry.best_example.scores)
        ids.append(lib.add(entry))
    return ids


def cmd_library(args: argparse.Namespace, cfg: Config) -> object:
    path = library_path(args, cfg)
    if args.action == "list":
        return [entry_row(e) for e in open_library(path, cfg)]
    if args.action == "show":
        lib = open_library(path, cfg)
        if args.id not in lib:
            raise DataError(f"no entry with id {args.id}")
        return lib[args.id].to_json()
    if args.action == "export":
        lib = open_library(path, cfg)
        docs = [e.to_json() for e in lib]
        write_atomic(Path(args.file), json.dumps(docs, ensure_ascii=False, indent=1) + "\n")
        return {"out": args.file, "entries": len(docs)}
    lib = open_library(path, cfg, create=True)
    docs = read_json(args.file, "import file")
    if isinstance(docs, dict):
        docs = [docs]
    ids = import_entries(lib, docs, make_embedder(cfg))
    lib.save(path)
    return {"library": str(path), "imported": ids, "entries": len(lib)}


# -- agent commands -------------------------------------------------------------


def build_roles(args: argparse.Namespace, cfg: Config) -> RoleSet:
    if args.mock_transcript:
        return RoleSet.shared(MockClient.load(args.mock_transcript))
    clients: dict[str, LlmClient] = {}
    mocks: dict[str, MockClient] = {}
    for role, rc in cfg.roles.items():
        if rc.mock_transcript:
            mocks.setdefault(rc.mock_transcript, MockClient.load(rc.mock_transcript))
            clients[role] = mocks[rc.mock_transcript]
        elif rc.endpoint:
            clients[role] = HttpChatClient(rc.endpoint, rc.model, rc.temperature, rc.api_key_env, rc.timeout)
        else:
            raise ConfigError(f"role {role} needs an endpoint or a mock_transcript")
    return RoleSet(clients)


def load_requests(args: argparse.Namespace, cfg: Config, budget: int) -> list[Request]:
    docs = read_json(args.requests, "requests file")
    if isinstance(docs, dict):
        docs = [docs]
    if not isinstance(docs, list) or not all(isinstance(d, dict) for d in docs):
        raise DataError("requests file must hold a request object or an array of them")
    return [Request.from_json(d, budget, cfg.metrics.threshold) for d in docs]


def cmd_agent(args: argparse.Namespace, cfg: Config) -> dict:
    roles = build_roles(args, cfg)
    for needed in ("steganography", "summarizer"):
        if not roles.has(needed):
            raise ConfigError(f"agent runs need a {needed} role")
    model = load_model(args, cfg)
    path = library_path(args, cfg)
    lib = open_library(path, cfg, create=True)
    embedder = make_embedder(cfg)
    evaluator = Evaluator(model, embedder, make_detector(cfg), cfg.metrics.build_dimensions(), roles)
    k = args.k if args.k is not None else cfg.budgets.k
    ctx = AgentContext(roles, evaluator, lib, Ledger(), k, cfg.budgets.gamma)
    size_before = len(lib)
    if args.action == "warmup":
        budget = args.budget if args.budget is not None else cfg.budgets.warmup
        requests = load_requests(args, cfg, cfg.budgets.runtime)
        warmup(ctx, requests, budget, cfg.budgets.sample_every, cfg.budgets.sample_seed)
        result: dict = {"iterations": budget}
    else:
        budget = args.budget if args.budget is not None else cfg.budgets.runtime
        requests = load_requests(args, cfg, budget)
        if args.budget is not None:
            requests = [Request(r.cover_text, r.secret, r.requirements, budget, r.threshold) for r in requests]
        outcomes = [LifelongSession(ctx, req, i).run() for i, req in enumerate(requests)]
        result = {
            "outcomes": [
                {"request": i, "status": o.status, "iterations": o.record.iteration, "score": o.score}
                for i, o in enumerate(outcomes)
            ]
        }
    ledger_path = Path(args.ledger) if args.ledger else path.with_suffix(".ledger.jsonl")
    ctx.ledger.save(ledger_path)
    out_path = Path(args.library_out) if args.library_out else path
    lib.save(out_path)
    return {**result, "ledger": str(ledger_path), "library": str(out_path), "admitted": len(lib) - size_before}


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autostega", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="write a synthetic training corpus")
    p.add_argument("--words", type=int, default=60000)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train an n-gram model artifact")
    p.add_argument("--corpus", required=True)
    p.add_argument("--order", type=int, default=2)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--unk", action="store_true", help="add an <unk> token for unseen words")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    for name, func in (("encode", cmd_encode), ("decode", cmd_decode)):
        p = sub.add_parser(name, help=f"{name} with the binned codec")
        p.add_argument("--model")
        p.add_argument("--seed", type=int, help="shared 64-bit key (overrides codec.seed)")
        p.add_argument("--prompt", help="prompt text shared by both sides")
        p.add_argument("--out")
        if name == "encode":
            p.add_argument("--secret", help="secret file, or - for stdin")
            p.add_argument("--secret-hex")
            p.add_argument("--step-log", help="write the per-step log here")
        else:
            p.add_argument("--stego", required=True, help="stego token file written by encode")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a stego text against its cover")
    p.add_argument("--model")
    p.add_argument("--stego", required=True, help="stego text or stego token file")
    p.add_argument("--cover", required=True)
    p.add_argument("--payload-bits", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("library", help="inspect or edit a strategy library")
    p.add_argument("--library")
    lsub = p.add_subparsers(dest="action", required=True)
    lsub.add_parser("list")
    lsub.add_parser("show").add_argument("id", type=int)
    lsub.add_parser("import").add_argument("file")
    lsub.add_parser("export").add_argument("file")
    p.set_defaults(func=cmd_library)

    p = sub.add_parser("agent", help="run the strategy-learning loop")
    asub = p.add_subparsers(dest="action", required=True)
    for action in ("warmup", "run"):
        a = asub.add_parser(action)
        a.add_argument("--requests", required=True, help="request object or array (JSON)")
        a.add_argument("--model")
        a.add_argument("--library")
        a.add_argument("--library-out", help="write the updated library here instead of in place")
        a.add_argument("--ledger", help="run ledger path (JSON Lines)")
        a.add_argument("--budget", type=int)
        a.add_argument("--k", type=int)
        a.add_argument("--mock-transcript", help="replay LLM roles from a transcript")
    p.set_defaults(func=cmd_agent)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(args.config)
        emit(args.func(args, cfg))
    except StegaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())

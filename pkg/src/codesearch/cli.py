"""Command line entry point.

Subcommands: ingest, train, finetune, eval, zero-shot, sweep, index,
search (one-shot and interactive), serve, export-embeddings. Machine
output (JSON/CSV) goes to stdout, logs to stderr. Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
from dataclasses import dataclass
from pathlib import Path

from . import __version__
from .utils import utc_now_iso

logger = logging.getLogger("codesearch")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2

DATA_ROOT_ENV = "CODESEARCH_DATA_ROOT"
INDEX_ENV = "CODESEARCH_INDEX"
CHECKPOINT_ENV = "CODESEARCH_CHECKPOINT"
HOST_ENV = "CODESEARCH_HOST"
PORT_ENV = "CODESEARCH_PORT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # noqa: D102 - argparse hook
        raise UsageError(message)


@dataclass
class RunManifest:
    """Record of a run, written before any long computation starts."""

    command: str
    argv: list[str]
    config: dict
    seed: int
    build_fingerprint: str
    started_at: str
    output_paths: list[str]

    def write(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "run_manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2), encoding="utf-8")
        return path


def build_fingerprint() -> str:
    parts = [f"codesearch-{__version__}"]
    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True,
            text=True,
            timeout=5,
            check=False,
        )
        if rev.returncode == 0 and rev.stdout.strip():
            parts.append(rev.stdout.strip())
    except OSError:
        pass
    return "+".join(parts)


def resolve_path(value: str | Path) -> Path:
    """Resolve a possibly relative path against CODESEARCH_DATA_ROOT."""
    path = Path(value)
    if path.is_absolute():
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not path.exists() and (Path(root) / path).exists():
        return Path(root) / path
    return path


def load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    config_path = resolve_path(path)
    text = config_path.read_text(encoding="utf-8")
    if config_path.suffix == ".toml":
        import tomllib

        return tomllib.loads(text)
    return json.loads(text)


def _setting(args_value, config: dict, key: str, default):
    """Precedence: explicit flag > config file > default."""
    if args_value is not None:
        return args_value
    if key in config:
        return config[key]
    return default


def _emit(data: dict) -> None:
    print(json.dumps(data, indent=2))


def _write_manifest(args, command: str, config: dict, seed: int, out_dir: Path, outputs: list[str]):
    manifest = RunManifest(
        command=command,
        argv=list(sys.argv[1:]),
        config=config,
        seed=seed,
        build_fingerprint=build_fingerprint(),
        started_at=utc_now_iso(),
        output_paths=outputs,
    )
    manifest.write(out_dir)


def _preset_configs(preset: str, vocab_size: int):
    from .training import PRESETS

    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}, choose from {sorted(PRESETS)}")
    return PRESETS[preset](vocab_size)


def _apply_overrides(args, config, enc_cfg, con_cfg, aug_cfg, train_cfg):
    """Fold config file values and explicit flags over preset defaults."""

    def pick(name, default):
        return _setting(getattr(args, name, None), config, name, default)

    con_cfg = dataclasses.replace(
        con_cfg,
        temperature=float(pick("temperature", con_cfg.temperature)),
        momentum=float(pick("momentum", con_cfg.momentum)),
        queue_size=int(pick("queue_size", con_cfg.queue_size)),
        batch_size=int(pick("batch_size", con_cfg.batch_size)),
    )
    methods = pick("methods", None)
    if isinstance(methods, str):
        methods = tuple(m.strip().upper() for m in methods.split(",") if m.strip())
    aug_cfg = dataclasses.replace(
        aug_cfg,
        ratio=float(pick("ratio", aug_cfg.ratio)),
        **({"methods": methods} if methods else {}),
    )
    train_cfg = dataclasses.replace(
        train_cfg,
        steps=int(pick("steps", train_cfg.steps)),
        epochs=int(pick("epochs", train_cfg.epochs)),
        lr=float(pick("lr", train_cfg.lr)),
        seed=int(pick("seed", train_cfg.seed)),
        checkpoint_every=int(pick("checkpoint_every", train_cfg.checkpoint_every)),
        code_max_len=int(pick("code_max_len", train_cfg.code_max_len)),
        query_max_len=int(pick("query_max_len", train_cfg.query_max_len)),
    )
    return enc_cfg, con_cfg, aug_cfg, train_cfg


def _load_corpus_and_vocab(corpus_dir: str):
    from .corpus import Vocabulary, load_corpus

    directory = resolve_path(corpus_dir)
    corpus = load_corpus(directory)
    vocab = Vocabulary.load(directory / "vocab.json")
    return corpus, vocab


def cmd_ingest(args) -> int:
    from .corpus import build_vocab, combine_splits, load_jsonl, save_corpus

    parts = {}
    for split in ("train", "valid", "test"):
        value = getattr(args, split)
        if value:
            parts[split] = load_jsonl(resolve_path(value), args.language)
    if not parts:
        raise UsageError("provide at least one of --train/--valid/--test")
    corpus = combine_splits(parts)
    vocab = build_vocab(corpus, args.vocab_size)
    out_dir = Path(args.out)
    _write_manifest(
        args,
        "ingest",
        {"language": args.language, "vocab_size": args.vocab_size},
        0,
        out_dir,
        [str(out_dir)],
    )
    save_corpus(corpus, out_dir)
    vocab.save(out_dir / "vocab.json")
    _emit(
        {
            "out": str(out_dir),
            "pairs": len(corpus),
            "splits": {s: len(corpus.pairs_in(s)) for s in ("train", "valid", "test")},
            "candidate_pool": len(corpus.candidate_pool),
            "vocab_size": len(vocab),
            "skipped_lines": corpus.load_warnings,
            "languages": corpus.languages(),
        }
    )
    return EXIT_OK


def cmd_train(args) -> int:
    from .training import pretrain

    corpus, vocab = _load_corpus_and_vocab(args.corpus)
    config = load_config_file(args.config)
    enc_cfg, con_cfg, aug_cfg, train_cfg = _apply_overrides(
        args, config, *_preset_configs(args.preset, len(vocab))
    )
    out_dir = Path(args.out)
    _write_manifest(
        args,
        "train",
        {
            "encoder": dataclasses.asdict(enc_cfg),
            "contrastive": dataclasses.asdict(con_cfg),
            "augmentation": {
                "ratio": aug_cfg.ratio,
                "methods": list(aug_cfg.methods),
                "seed": aug_cfg.seed,
            },
            "training": dataclasses.asdict(train_cfg),
        },
        train_cfg.seed,
        out_dir,
        [str(out_dir / "checkpoint.pt")],
    )
    result = pretrain(
        corpus,
        vocab,
        enc_cfg,
        con_cfg,
        aug_cfg,
        train_cfg,
        out_dir,
        resume_from=args.resume,
        audit_path=args.audit,
    )
    _emit(
        {
            "checkpoint": str(result.checkpoint_path),
            "steps": result.state.step,
            "final_loss": result.losses[-1] if result.losses else None,
            "metrics": str(out_dir / "metrics.csv"),
        }
    )
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .training import TrainingConfig, finetune

    corpus, _ = _load_corpus_and_vocab(args.corpus)
    config = load_config_file(args.config)
    train_cfg = TrainingConfig(
        epochs=int(_setting(args.epochs, config, "epochs", 5)),
        lr=float(_setting(args.lr, config, "lr", 2e-3)),
        seed=int(_setting(args.seed, config, "seed", 0)),
    )
    out_dir = Path(args.out)
    _write_manifest(
        args,
        "finetune",
        dataclasses.asdict(train_cfg),
        train_cfg.seed,
        out_dir,
        [str(out_dir / "checkpoint.pt")],
    )
    result = finetune(resolve_path(args.checkpoint), corpus, train_cfg, out_dir)
    _emit(
        {
            "checkpoint": str(result.checkpoint_path),
            "history": [[e, m] for e, m in result.history],
            "best_epoch": result.best_epoch,
            "best_mrr": result.best_mrr,
        }
    )
    return EXIT_OK


def _run_eval(args, stage_name: str) -> int:
    from .training import zero_shot_eval

    corpus, _ = _load_corpus_and_vocab(args.corpus)
    report = zero_shot_eval(resolve_path(args.checkpoint), corpus, split=args.split)
    if args.csv:
        sys.stdout.write(report.to_csv())
    else:
        _emit(report.to_dict(include_ranks=args.ranks))
    return EXIT_OK


def cmd_eval(args) -> int:
    return _run_eval(args, "eval")


def cmd_zero_shot(args) -> int:
    return _run_eval(args, "zero-shot")


def parse_grid(specs: list[str]) -> dict[str, list[float]]:
    grid: dict[str, list[float]] = {}
    for spec in specs:
        if "=" not in spec:
            raise UsageError(f"grid spec {spec!r} must look like name=v1,v2")
        name, _, values = spec.partition("=")
        name = name.strip()
        try:
            grid[name] = [float(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise UsageError(f"bad grid values in {spec!r}") from exc
        if not grid[name]:
            raise UsageError(f"grid spec {spec!r} has no values")
    return grid


def cmd_sweep(args) -> int:
    import csv as _csv

    from .evaluation import sweep

    corpus, vocab = _load_corpus_and_vocab(args.corpus)
    config = load_config_file(args.config)
    enc_cfg, con_cfg, aug_cfg, train_cfg = _apply_overrides(
        args, config, *_preset_configs(args.preset, len(vocab))
    )
    grid = parse_grid(args.grid)
    out_dir = Path(args.out)
    _write_manifest(
        args,
        "sweep",
        {"grid": grid, "training": dataclasses.asdict(train_cfg)},
        train_cfg.seed,
        out_dir,
        [str(out_dir / "sweep.csv")],
    )
    rows = sweep(
        grid, corpus, vocab, enc_cfg, con_cfg, aug_cfg, train_cfg, out_dir,
        eval_split=args.split,
    )
    writer = _csv.DictWriter(sys.stdout, fieldnames=["hyperparameter", "value", "mrr"])
    writer.writeheader()
    writer.writerows(rows)
    return EXIT_OK


def cmd_index(args) -> int:
    from .checkpoint import load_checkpoint
    from .index import build_index, build_index_from_files, save_index

    if not args.corpus and not args.files:
        raise UsageError("provide --corpus or --files")
    loaded = load_checkpoint(resolve_path(args.checkpoint))
    out_path = Path(args.out)
    _write_manifest(
        args,
        "index",
        {"split": args.split, "files": args.files or []},
        loaded.seed,
        out_path.parent if out_path.parent != Path("") else Path("."),
        [str(out_path)],
    )
    if args.files:
        index = build_index_from_files(loaded.bundle, [resolve_path(f) for f in args.files])
    else:
        corpus, _ = _load_corpus_and_vocab(args.corpus)
        index = build_index(
            loaded.bundle, corpus, split=args.split, source_path=str(resolve_path(args.corpus))
        )
    save_index(index, out_path)
    _emit(
        {
            "index": str(out_path),
            "count": len(index),
            "dim": int(index.vectors.shape[1]),
            "fingerprint": index.fingerprint,
        }
    )
    return EXIT_OK


def _hit_table(hits) -> str:
    lines = [f"{'rank':>4}  {'score':>8}  {'id':<28} snippet"]
    for hit in hits:
        snippet = hit.snippet.replace("\n", " ")
        if len(snippet) > 60:
            snippet = snippet[:57] + "..."
        lines.append(f"{hit.rank:>4}  {hit.score:>8.4f}  {hit.id:<28} {snippet}")
    return "\n".join(lines)


def cmd_search(args) -> int:
    from .checkpoint import load_checkpoint
    from .index import load_index, search

    loaded = load_checkpoint(resolve_path(args.checkpoint))
    index = load_index(resolve_path(args.index))

    def run_one(query: str) -> int:
        hits = search(index, loaded.bundle, query, args.k)
        if args.json:
            _emit({"query": query, "k": args.k, "hits": [h.to_dict() for h in hits]})
        else:
            print(_hit_table(hits))
        return EXIT_OK

    if args.interactive:
        print("interactive search; empty line or 'quit' to exit", file=sys.stderr)
        while True:
            try:
                query = input("query> ").strip()
            except EOFError:
                break
            if not query or query in {"quit", "exit", ":q"}:
                break
            try:
                run_one(query)
            except ValueError as exc:
                print(f"error: {exc}", file=sys.stderr)
        return EXIT_OK
    if not args.q:
        raise UsageError("provide --q or --interactive")
    return run_one(args.q)


def cmd_serve(args) -> int:
    from .service import serve

    index_path = args.index or os.environ.get(INDEX_ENV)
    checkpoint_path = args.checkpoint or os.environ.get(CHECKPOINT_ENV)
    if not index_path or not checkpoint_path:
        raise UsageError("--index and --checkpoint are required (flags or environment)")
    host = args.host or os.environ.get(HOST_ENV) or "127.0.0.1"
    port = args.port if args.port is not None else int(os.environ.get(PORT_ENV, "8080"))
    serve(
        resolve_path(index_path),
        resolve_path(checkpoint_path),
        host=host,
        port=port,
        static_dir=args.static,
    )
    return EXIT_OK


def cmd_export_embeddings(args) -> int:
    from .checkpoint import load_checkpoint
    from .evaluation import export_embeddings

    corpus, _ = _load_corpus_and_vocab(args.corpus)
    loaded = load_checkpoint(resolve_path(args.checkpoint))
    pairs = corpus.pairs_in(args.split)
    if args.out:
        export_embeddings(loaded.bundle, pairs, Path(args.out))
    else:
        export_embeddings(loaded.bundle, pairs, sys.stdout)
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="codesearch", description=__doc__)
    parser.add_argument("--version", action="version", version=f"codesearch {__version__}")
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("ingest", help="load jsonl datasets into a corpus directory")
    p.add_argument("--train")
    p.add_argument("--valid")
    p.add_argument("--test")
    p.add_argument("--language", default="python")
    p.add_argument("--vocab-size", dest="vocab_size", type=int, default=8192)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ingest)

    def add_train_flags(p):
        p.add_argument("--corpus", required=True)
        p.add_argument("--preset", default="toy")
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--steps", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--temperature", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--ratio", type=float)
        p.add_argument("--methods")
        p.add_argument("--queue-size", dest="queue_size", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
        p.add_argument("--code-max-len", dest="code_max_len", type=int)
        p.add_argument("--query-max-len", dest="query_max_len", type=int)

    p = sub.add_parser("train", help="momentum-contrastive pre-training")
    add_train_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--resume")
    p.add_argument("--audit", help="write an augmentation trace (jsonl) here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("finetune", help="in-batch fine-tuning with MRR model selection")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    for name, handler in (("eval", cmd_eval), ("zero-shot", cmd_zero_shot)):
        p = sub.add_parser(name, help=f"{name} retrieval evaluation")
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--corpus", required=True)
        p.add_argument("--split", default="test")
        p.add_argument("--ranks", action="store_true", help="include per-query ranks")
        p.add_argument("--csv", action="store_true", help="one-row CSV instead of JSON")
        p.add_argument("--seed", type=int, default=0)
        p.set_defaults(func=handler)

    p = sub.add_parser("sweep", help="hyperparameter sweep (train+eval per grid point)")
    add_train_flags(p)
    p.add_argument("--grid", action="append", required=True, help="name=v1,v2 (repeatable)")
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="valid")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("index", help="build and persist an embedding index")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus")
    p.add_argument("--files", nargs="+", help="index raw source files instead of a corpus")
    p.add_argument("--split", default="all", help="train/valid/test/all/pool")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("search", help="top-k search against a saved index")
    p.add_argument("--index", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--q")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--json", action="store_true")
    p.add_argument("--interactive", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("serve", help="HTTP search service over a saved index")
    p.add_argument("--index")
    p.add_argument("--checkpoint")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--static", help="directory of web UI assets to serve at /")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-embeddings", help="dump representations and pair distances as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--out")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_embeddings)

    return parser


def dispatch(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        level=os.environ.get("CODESEARCH_LOG", "INFO"),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if not getattr(args, "command", None):
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001 - single exit funnel for the CLI
        logger.error("%s", exc)
        return EXIT_RUNTIME


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()

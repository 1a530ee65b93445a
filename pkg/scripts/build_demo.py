#!/usr/bin/env python3
"""Build the demo artifacts (corpus, checkpoint, index) into a directory.

Usage: python scripts/build_demo.py --out demo_build [--steps 120]

With --steps 0 (the default for tests) the checkpoint is a seeded random
initialization, which is enough for exercising the search stack end to
end; a small positive step count makes the demo rankings less arbitrary.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

REPO_ROOT = Path(__file__).resolve().parent.parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", required=True)
    parser.add_argument("--steps", type=int, default=0)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--corpus-jsonl", default=str(REPO_ROOT / "demo" / "demo_corpus.jsonl"))
    args = parser.parse_args()

    from codesearch.cli import dispatch

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    corpus_dir = out / "corpus"
    run_dir = out / "run"
    index_path = out / "demo.idx"

    steps = [
        ["ingest", "--train", args.corpus_jsonl, "--test", args.corpus_jsonl,
         "--language", "python", "--vocab-size", "2048", "--out", str(corpus_dir)],
        ["train", "--corpus", str(corpus_dir), "--preset", "toy",
         "--steps", str(args.steps), "--seed", str(args.seed),
         "--batch-size", "8", "--queue-size", "64",
         "--out", str(run_dir)],
        ["index", "--checkpoint", str(run_dir / "checkpoint.pt"),
         "--corpus", str(corpus_dir), "--split", "pool", "--out", str(index_path)],
    ]
    for argv in steps:
        code = dispatch(argv)
        if code != 0:
            print(f"demo build step failed: {argv}", file=sys.stderr)
            return code
    manifest = {
        "corpus": str(corpus_dir),
        "checkpoint": str(run_dir / "checkpoint.pt"),
        "index": str(index_path),
    }
    (out / "demo_manifest.json").write_text(json.dumps(manifest, indent=2), encoding="utf-8")
    print(json.dumps(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main())

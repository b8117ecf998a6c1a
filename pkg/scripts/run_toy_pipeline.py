#!/usr/bin/env python3
"""Drive the whole pipeline end to end at desk scale with the mock backend.

Stages: toy corpus -> ingest -> midpoint split -> data-constrained trio
(full / repeat2x / synthetic extension) -> conversational style audit ->
summary. Everything is seeded; running twice with the same seed produces
byte-identical artifacts.

Usage:
  python scripts/run_toy_pipeline.py --out /tmp/pipeline-demo --seed 7
"""

from __future__ import annotations

import argparse
import json
import subprocess
import sys
from pathlib import Path

SCRIPTS = Path(__file__).parent


def cli(*argv: str) -> None:
    cmd = [sys.executable, "-m", "synthpipe", *argv]
    print("+", " ".join(cmd))
    subprocess.run(cmd, check=True)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=Path("pipeline-demo"))
    parser.add_argument("--docs", type=int, default=500)
    parser.add_argument("--seed", type=int, default=7)
    args = parser.parse_args()

    root = args.out
    root.mkdir(parents=True, exist_ok=True)
    seed = str(args.seed)

    raw = root / "raw.jsonl"
    subprocess.run(
        [
            sys.executable, str(SCRIPTS / "make_toy_corpus.py"),
            "--docs", str(args.docs), "--seed", seed, "--out", str(raw),
            "--conversational", "0.0367",
        ],
        check=True,
    )

    backend = root / "backend.json"
    backend.write_text(json.dumps({"kind": "mock", "backend_id": "mock"}))

    cli("--seed", seed, "ingest", "--paths", str(raw), "--name", "web",
        "--out", str(root / "corpus"))
    manifest = json.loads((root / "corpus" / "manifest.json").read_text())
    budget = str(manifest["total_tokens"])

    cli("--seed", seed, "split", "--corpus", str(root / "corpus"),
        "--out", str(root / "half"))
    cli("--seed", seed, "mix", "--rq2", "--corpus", str(root / "corpus"),
        "--budget", budget, "--backend-config", str(backend),
        "--out", str(root / "rq2"))
    cli("--seed", seed, "style", "audit", "--corpus", str(root / "corpus"),
        "--method", "heuristic", "--sample", str(min(args.docs, 400)),
        "--out", str(root / "style.json"))

    print("\nartifacts:")
    for path in sorted(root.rglob("report.json")):
        print(f"  {path}")
    print(f"  {root / 'style.json'}")
    print(f"\nstyle audit: {(root / 'style.json').read_text().strip()}")


if __name__ == "__main__":
    main()

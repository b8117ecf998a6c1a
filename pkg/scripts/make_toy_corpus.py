#!/usr/bin/env python3
"""Generate a seeded toy web-style corpus for pipeline experiments.

Emits JSONL documents with multi-sentence bodies, a planted conversational
fraction (FAQ-labeled Q/A texts), and a quality-tier split, so every CLI
stage (ingest, split, synthesize, style audit, mix) has something real to
chew on.

Usage:
  python scripts/make_toy_corpus.py --docs 500 --out /tmp/toy/raw.jsonl
  python scripts/make_toy_corpus.py --docs 2000 --conversational 0.0367 --seed 3
"""

from __future__ import annotations

import argparse
import json
import random
from pathlib import Path

ADJECTIVES = [
    "amber", "brisk", "coastal", "dusty", "early", "formal", "glossy",
    "hollow", "inland", "jagged", "keen", "lunar", "mellow", "narrow",
]
NOUNS = [
    "archive", "bridge", "canyon", "dataset", "engine", "forest", "grid",
    "harbor", "index", "journal", "kernel", "lantern", "market", "network",
]
VERBS = ["covers", "describes", "explains", "lists", "maps", "records", "tracks"]


def plain_sentence(rng: random.Random) -> str:
    return (
        f"{rng.choice(ADJECTIVES).capitalize()} {rng.choice(NOUNS)} "
        f"{rng.choice(VERBS)} the {rng.choice(ADJECTIVES)} {rng.choice(NOUNS)}."
    )


def plain_doc(rng: random.Random) -> str:
    return " ".join(plain_sentence(rng) for _ in range(rng.randint(2, 6)))


def conversational_doc(rng: random.Random) -> str:
    turns = []
    for _ in range(rng.randint(2, 4)):
        topic = rng.choice(NOUNS)
        turns.append(f"Q: What about the {topic}?")
        turns.append(f"A: The {topic} {rng.choice(VERBS)} the {rng.choice(NOUNS)}.")
    return " ".join(turns)


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--docs", type=int, default=500)
    parser.add_argument("--conversational", type=float, default=0.05,
                        help="fraction of documents planted as conversational")
    parser.add_argument("--hq-fraction", type=float, default=0.5)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--source", default="toyweb")
    parser.add_argument("--out", type=Path, default=Path("toy_corpus/raw.jsonl"))
    args = parser.parse_args()

    rng = random.Random(args.seed)
    n_conv = round(args.docs * args.conversational)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for i in range(args.docs):
            conversational = i < n_conv
            record = {
                "id": f"{args.source}-{args.seed}-{i:06d}",
                "text": conversational_doc(rng) if conversational else plain_doc(rng),
                "source": args.source,
                "quality_tier": "hq" if rng.random() < args.hq_fraction else "lq",
                "style_labels": ["FAQ"] if conversational else ["News Articles"],
            }
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
    print(f"wrote {args.docs} docs ({n_conv} conversational) to {args.out}")


if __name__ == "__main__":
    main()

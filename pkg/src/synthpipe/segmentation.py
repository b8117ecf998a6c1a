"""Rule-based sentence segmentation and the token-midpoint document split.

Sentence boundaries occur after a terminator (``. ! ?``) that is followed by
whitespace and an uppercase letter, or by end-of-text, with a small
abbreviation stop-list. This is deliberately dependency-free and
deterministic: the split feeds token-budget accounting, where approximate
linguistic boundaries are fine but reproducibility is not negotiable.

Offsets are Python string (code point) indices, start inclusive / end
exclusive. Spans cover exactly the non-whitespace content of the text.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import (
    CorpusHandle,
    Document,
    REFERENCE_TOKENIZER,
    Tokenizer,
    _parse_line,
    save_manifest,
)
from .errors import EmptyCorpus, EmptyText, NoInteriorBoundary
from .io_utils import iter_lines, write_jsonl_shard

TERMINATORS = frozenset(".!?")

# Tokens that end with '.' but do not close a sentence.
ABBREVIATIONS = frozenset(
    {"Dr.", "Mr.", "Mrs.", "Ms.", "Prof.", "e.g.", "i.e.", "vs.", "etc.", "Fig.", "Eq."}
)

KEEP_SIDES = ("first", "second")


@dataclass(frozen=True)
class SentenceSpan:
    start: int
    end: int
    token_count: int


@dataclass(frozen=True)
class SplitResult:
    first_half: Document
    second_half: Document
    boundary_index: int  # number of sentences in the first half


def _token_ending_at(text: str, pos: int) -> str:
    """Maximal non-whitespace run ending at `pos` (exclusive)."""
    start = pos
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start:pos]


def _is_boundary(text: str, i: int) -> bool:
    """True if the terminator at index i closes a sentence."""
    if text[i] == "." and _token_ending_at(text, i + 1) in ABBREVIATIONS:
        return False
    j = i + 1
    if j >= len(text) or text[j:].isspace():
        return True  # end-of-text (possibly trailing whitespace)
    if not text[j].isspace():
        return False
    while j < len(text) and text[j].isspace():
        j += 1
    return text[j].isupper()


def split_sentences(text: str, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> list[SentenceSpan]:
    """Deterministic sentence spans; a text with no terminator is one sentence."""
    if not text.strip():
        raise EmptyText("cannot segment empty text")
    spans: list[SentenceSpan] = []
    n = len(text)
    cursor = 0

    def advance_to_content(pos: int) -> int:
        while pos < n and text[pos].isspace():
            pos += 1
        return pos

    start = advance_to_content(0)
    i = start
    while i < n:
        if text[i] in TERMINATORS and _is_boundary(text, i):
            spans.append(SentenceSpan(start, i + 1, tokenizer.count(text[start:i + 1])))
            start = advance_to_content(i + 1)
            i = start
        else:
            i += 1
    # Trailing content without a terminator forms the final sentence.
    if start < n and not text[start:].isspace():
        end = n
        while text[end - 1].isspace():
            end -= 1
        spans.append(SentenceSpan(start, end, tokenizer.count(text[start:end])))
    return spans


def split_at_midpoint(doc: Document, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> SplitResult:
    """Split at the interior sentence boundary closest to the token midpoint.

    The boundary index b minimizes |cum_tokens(b) - total/2| over interior
    boundaries; ties break toward the smaller index, which never makes the
    second (retained) half the smaller one. Halves inherit source, quality
    tier, labels and meta; ids get ':h1' / ':h2' suffixes.
    """
    spans = split_sentences(doc.text, tokenizer)
    if len(spans) < 2:
        raise NoInteriorBoundary(f"document {doc.id!r} has a single sentence")
    total = sum(s.token_count for s in spans)
    best_b = 1
    best_dist = None
    cum = 0
    for b in range(1, len(spans)):
        cum += spans[b - 1].token_count
        dist = abs(cum - total / 2)
        if best_dist is None or dist < best_dist:
            best_dist = dist
            best_b = b

    def half(doc_spans: list[SentenceSpan], suffix: str) -> Document:
        text = doc.text[doc_spans[0].start:doc_spans[-1].end]
        return replace(
            doc,
            id=doc.id + suffix,
            text=text,
            token_count=tokenizer.count(text),
            meta=dict(doc.meta),
        )

    return SplitResult(
        first_half=half(spans[:best_b], ":h1"),
        second_half=half(spans[best_b:], ":h2"),
        boundary_index=best_b,
    )


@dataclass(frozen=True)
class HalfCorpusResult:
    handle: CorpusHandle
    dropped: int  # unsplittable (single-sentence) documents


def build_half_corpus(
    corpus: CorpusHandle,
    keep: str,
    *,
    out_dir: Path | str,
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    name: str | None = None,
) -> HalfCorpusResult:
    """Materialize the kept half of every splittable document.

    Single-sentence documents cannot be split; they are dropped and counted.
    Output shards mirror the input shard layout.
    """
    if keep not in KEEP_SIDES:
        raise ValueError(f"keep must be one of {KEEP_SIDES}")
    name = name or f"{corpus.name}-{keep}half"
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dropped = 0
    shard_stats: list[dict] = []
    shard_paths: list[Path] = []
    total_tokens = total_docs = 0
    for idx, shard in enumerate(corpus.shard_paths):
        halves: list[Document] = []
        for line in iter_lines(shard):
            if not line.strip():
                continue
            doc = _parse_line(line, corpus.name, "unknown", tokenizer)
            try:
                result = split_at_midpoint(doc, tokenizer)
            except NoInteriorBoundary:
                dropped += 1
                continue
            halves.append(result.first_half if keep == "first" else result.second_half)
        out_path = out_dir / f"{name}-{idx:05d}.jsonl"
        write_jsonl_shard(out_path, [doc.to_json_line() for doc in halves])
        tokens = sum(d.token_count for d in halves)
        shard_paths.append(out_path)
        shard_stats.append({"path": out_path.name, "docs": len(halves), "tokens": tokens})
        total_docs += len(halves)
        total_tokens += tokens

    if total_docs == 0:
        raise EmptyCorpus(f"no splittable documents in corpus {corpus.name!r}")
    handle = CorpusHandle(
        name=name,
        shard_paths=tuple(shard_paths),
        total_tokens=total_tokens,
        doc_count=total_docs,
    )
    save_manifest(handle, out_dir / "manifest.json", shard_stats)
    return HalfCorpusResult(handle=handle, dropped=dropped)

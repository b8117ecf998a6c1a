"""Sharded corpus I/O: the document schema, token counting, JSONL shards.

A corpus on disk is a directory of JSONL shards plus a ``manifest.json``
(``{name, shards: [{path, docs, tokens}], total_tokens}``). Shard paths in the
manifest are relative to the manifest's directory. Every budget computation in
the pipeline runs in units of the configured tokenizer; the reference
tokenizer counts maximal runs of non-whitespace, which keeps token counts
additive across document concatenation.

Line schema (one JSON object per line): required ``text``; optional ``id``,
``source``, ``quality_tier`` in {hq, lq, unknown}, ``style_labels`` (array of
strings), ``meta`` (object of strings). ``.gz`` shards are detected by suffix.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from .errors import (
    EmptyCorpus,
    OversizedDocument,
    SchemaViolation,
    UnreadableFile,
)
from .hashing import content_id
from .io_utils import atomic_write_json, iter_lines, write_jsonl_shard

QUALITY_TIERS = ("hq", "lq", "unknown")


# -- tokenizers ---------------------------------------------------------------

class Tokenizer(Protocol):
    name: str

    def count(self, text: str) -> int: ...


@dataclass(frozen=True)
class WhitespaceTokenizer:
    """Reference tokenizer: counts maximal runs of non-whitespace."""

    name: str = "whitespace"

    def count(self, text: str) -> int:
        return len(text.split())


REFERENCE_TOKENIZER = WhitespaceTokenizer()

_TOKENIZERS = {"whitespace": REFERENCE_TOKENIZER}


def get_tokenizer(name: str) -> Tokenizer:
    try:
        return _TOKENIZERS[name]
    except KeyError:
        raise SchemaViolation(f"unknown tokenizer {name!r}; known: {sorted(_TOKENIZERS)}")


def count_tokens(text: str, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> int:
    return tokenizer.count(text)


# -- documents ----------------------------------------------------------------

@dataclass(frozen=True)
class Document:
    """One corpus record. Treated as immutable after construction."""

    id: str
    text: str
    source: str
    quality_tier: str = "unknown"
    style_labels: tuple[str, ...] = ()
    token_count: int = 0
    meta: dict[str, str] = field(default_factory=dict)

    def to_json_line(self) -> str:
        obj = {
            "id": self.id,
            "text": self.text,
            "source": self.source,
            "quality_tier": self.quality_tier,
            "style_labels": list(self.style_labels),
            "token_count": self.token_count,
            "meta": self.meta,
        }
        return json.dumps(obj, ensure_ascii=False)


@dataclass(frozen=True)
class CorpusHandle:
    """Immutable view of a materialized corpus; shard order is canonical."""

    name: str
    shard_paths: tuple[Path, ...]
    total_tokens: int
    doc_count: int


@dataclass(frozen=True)
class IngestResult:
    handle: CorpusHandle
    skipped_lines: int


def _parse_line(
    line: str,
    default_source: str,
    default_tier: str,
    tokenizer: Tokenizer,
) -> Document:
    """Parse one JSONL line; raises SchemaViolation on any malformation."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"invalid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise SchemaViolation("line is not a JSON object")
    text = obj.get("text")
    if not isinstance(text, str) or not text.strip():
        raise SchemaViolation('missing or empty "text" field')
    source = obj.get("source", default_source)
    if not isinstance(source, str):
        raise SchemaViolation('"source" must be a string')
    tier = obj.get("quality_tier", default_tier)
    if tier not in QUALITY_TIERS:
        raise SchemaViolation(f'"quality_tier" must be one of {QUALITY_TIERS}, got {tier!r}')
    labels = obj.get("style_labels", [])
    if not (isinstance(labels, list) and all(isinstance(x, str) for x in labels)):
        raise SchemaViolation('"style_labels" must be an array of strings')
    meta = obj.get("meta", {})
    if not (isinstance(meta, dict) and all(
            isinstance(k, str) and isinstance(v, str) for k, v in meta.items())):
        raise SchemaViolation('"meta" must be an object of strings')
    doc_id = obj.get("id")
    if doc_id is None:
        doc_id = content_id(text, source)
    elif not isinstance(doc_id, str) or not doc_id:
        raise SchemaViolation('"id" must be a non-empty string')
    return Document(
        id=doc_id,
        text=text,
        source=source,
        quality_tier=tier,
        style_labels=tuple(labels),
        token_count=tokenizer.count(text),
        meta=dict(meta),
    )


def ingest_jsonl(
    paths: Sequence[Path | str],
    tokenizer: Tokenizer = REFERENCE_TOKENIZER,
    quality_tier: str = "unknown",
    *,
    name: str,
    out_dir: Path | str,
    strict: bool = False,
    jobs: int = 1,
) -> IngestResult:
    """Materialize JSONL shards into a normalized corpus directory.

    Token counts are computed with `tokenizer` and cached in the output;
    documents without an ``id`` get a content-hash id. In lenient mode
    (default) malformed lines are counted and skipped; ``strict=True`` raises
    on the first one. Duplicate ids count as malformed. Distinct shards may be
    parsed concurrently (``jobs``); output order always follows input order.
    """
    if quality_tier not in QUALITY_TIERS:
        raise SchemaViolation(f"quality_tier must be one of {QUALITY_TIERS}")
    in_paths = [Path(p) for p in paths]
    if not in_paths:
        raise EmptyCorpus("no input shards given")
    for p in in_paths:
        if not p.is_file():
            raise UnreadableFile(f"no such file: {p}")
    out_dir = Path(out_dir)
    out_paths = [out_dir / f"{name}-{i:05d}.jsonl" for i in range(len(in_paths))]

    # Duplicate-id detection must see ids across shards, so parse first
    # (possibly in parallel, shards are independent) and check in shard order.
    def parse(path: Path) -> list[tuple[int, Document | SchemaViolation]]:
        out: list[tuple[int, Document | SchemaViolation]] = []
        for lineno, line in enumerate(iter_lines(path), start=1):
            if not line.strip():
                continue
            try:
                out.append((lineno, _parse_line(line, name, quality_tier, tokenizer)))
            except SchemaViolation as exc:
                out.append((lineno, exc))
        return out

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parsed = list(pool.map(parse, in_paths))
    else:
        parsed = [parse(p) for p in in_paths]

    seen_ids: set[str] = set()
    skipped = 0
    shard_stats: list[dict] = []
    total_tokens = total_docs = 0
    for in_path, out_path, rows in zip(in_paths, out_paths, parsed):
        lines: list[str] = []
        docs = tokens = 0
        for lineno, item in rows:
            if isinstance(item, SchemaViolation):
                if strict:
                    raise SchemaViolation(f"{in_path}:{lineno}: {item}")
                skipped += 1
                continue
            if item.id in seen_ids:
                if strict:
                    raise SchemaViolation(f"{in_path}:{lineno}: duplicate document id {item.id!r}")
                skipped += 1
                continue
            seen_ids.add(item.id)
            lines.append(item.to_json_line())
            docs += 1
            tokens += item.token_count
        write_jsonl_shard(out_path, lines)
        shard_stats.append({"path": out_path.name, "docs": docs, "tokens": tokens})
        total_docs += docs
        total_tokens += tokens

    if total_docs == 0:
        raise EmptyCorpus(f"no valid documents in {len(in_paths)} shard(s)")
    handle = CorpusHandle(
        name=name,
        shard_paths=tuple(out_paths),
        total_tokens=total_tokens,
        doc_count=total_docs,
    )
    save_manifest(handle, out_dir / "manifest.json", shard_stats)
    return IngestResult(handle=handle, skipped_lines=skipped)


def write_shards(
    documents: Iterable[Document],
    out_dir: Path | str,
    max_tokens_per_shard: int,
    *,
    name: str,
    gzip_output: bool = False,
) -> CorpusHandle:
    """Write documents to token-capped JSONL shards, preserving order.

    Greedy packing: a shard is closed as soon as adding the next document
    would exceed the cap. A single document larger than the cap is rejected.
    """
    if max_tokens_per_shard <= 0:
        raise ValueError("max_tokens_per_shard must be positive")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    suffix = ".jsonl.gz" if gzip_output else ".jsonl"

    shard_stats: list[dict] = []
    shard_paths: list[Path] = []
    total_tokens = total_docs = 0

    current: list[Document] = []
    current_tokens = 0

    def flush() -> None:
        nonlocal current, current_tokens
        if not current:
            return
        idx = len(shard_paths)
        path = out_dir / f"{name}-{idx:05d}{suffix}"
        write_jsonl_shard(path, [doc.to_json_line() for doc in current], gzip_output)
        shard_paths.append(path)
        shard_stats.append({"path": path.name, "docs": len(current), "tokens": current_tokens})
        current = []
        current_tokens = 0

    for doc in documents:
        if doc.token_count > max_tokens_per_shard:
            raise OversizedDocument(
                f"document {doc.id!r} has {doc.token_count} tokens,"
                f" exceeds shard cap {max_tokens_per_shard}"
            )
        if current and current_tokens + doc.token_count > max_tokens_per_shard:
            flush()
        current.append(doc)
        current_tokens += doc.token_count
        total_docs += 1
        total_tokens += doc.token_count
    flush()

    if total_docs == 0:
        raise EmptyCorpus("no documents to write")
    handle = CorpusHandle(
        name=name,
        shard_paths=tuple(shard_paths),
        total_tokens=total_tokens,
        doc_count=total_docs,
    )
    save_manifest(handle, out_dir / "manifest.json", shard_stats)
    return handle


def iter_documents(handle: CorpusHandle, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> Iterator[Document]:
    """Yield documents in canonical (shard, line) order."""
    for path in handle.shard_paths:
        for line in iter_lines(path):
            if not line.strip():
                continue
            yield _parse_line(line, handle.name, "unknown", tokenizer)


def load_documents(handle: CorpusHandle, tokenizer: Tokenizer = REFERENCE_TOKENIZER) -> list[Document]:
    return list(iter_documents(handle, tokenizer))


# -- manifests ----------------------------------------------------------------

def save_manifest(handle: CorpusHandle, path: Path | str, shard_stats: list[dict]) -> None:
    obj = {
        "name": handle.name,
        "shards": shard_stats,
        "total_tokens": handle.total_tokens,
    }
    atomic_write_json(Path(path), obj)


def load_manifest(path: Path | str) -> CorpusHandle:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    try:
        with open(path, encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise SchemaViolation(f"{path}: invalid manifest JSON: {exc}") from exc
    try:
        shards = obj["shards"]
        handle = CorpusHandle(
            name=obj["name"],
            shard_paths=tuple(path.parent / s["path"] for s in shards),
            total_tokens=int(obj["total_tokens"]),
            doc_count=sum(int(s["docs"]) for s in shards),
        )
    except (KeyError, TypeError) as exc:
        raise SchemaViolation(f"{path}: malformed manifest: {exc}") from exc
    return handle

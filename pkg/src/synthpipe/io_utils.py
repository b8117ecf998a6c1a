"""Small filesystem helpers shared across modules."""

from __future__ import annotations

import gzip
import json
import os
import tempfile
from pathlib import Path
from typing import Any, IO, Iterator

from .errors import IoFailure, UnreadableFile


def atomic_write_text(path: Path, text: str) -> None:
    """Write via temp file + rename so readers never observe partial output."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def atomic_write_json(path: Path, obj: Any) -> None:
    atomic_write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def atomic_write_bytes(path: Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except OSError as exc:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def write_jsonl_shard(path: Path, lines: list[str], gzip_output: bool = False) -> None:
    """Atomically write one JSONL shard; gzip output is byte-deterministic."""
    text = "\n".join(lines) + ("\n" if lines else "")
    if gzip_output:
        # mtime=0 keeps the gzip header independent of wall-clock time
        atomic_write_bytes(Path(path), gzip.compress(text.encode("utf-8"), mtime=0))
    else:
        atomic_write_text(Path(path), text)


def open_maybe_gzip(path: Path, mode: str = "rt") -> IO[str]:
    path = Path(path)
    try:
        if path.suffix == ".gz":
            return gzip.open(path, mode, encoding="utf-8")
        return open(path, mode, encoding="utf-8")
    except OSError as exc:
        raise UnreadableFile(f"cannot open {path}: {exc}") from exc


def iter_lines(path: Path) -> Iterator[str]:
    with open_maybe_gzip(path) as fh:
        try:
            yield from fh
        except (OSError, EOFError) as exc:  # truncated gzip, disk errors
            raise UnreadableFile(f"error reading {path}: {exc}") from exc

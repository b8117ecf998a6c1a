"""Keyed hashing used everywhere determinism matters.

All seeded behaviour in the pipeline (strategy assignment, shuffles,
sampling, the mock generator, sub-seed derivation) is defined in terms of
these functions rather than a stateful RNG, so results are independent of
iteration order, process count, and Python version. Parts are length-prefixed
before hashing so distinct tuples can never collide by concatenation.
"""

from __future__ import annotations

import hashlib
import struct

_PERSON = b"synthpipe.v1"

Part = str | int | bytes


def _encode(parts: tuple[Part, ...]) -> bytes:
    buf = bytearray()
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
        elif isinstance(part, bool):  # bool is an int subclass; reject to avoid surprises
            raise TypeError("bool is not a hashable part")
        elif isinstance(part, int):
            raw = struct.pack(">q", part)
        elif isinstance(part, bytes):
            raw = part
        else:
            raise TypeError(f"unhashable part type: {type(part)!r}")
        buf += struct.pack(">I", len(raw))
        buf += raw
    return bytes(buf)


def hash_bytes(*parts: Part, digest_size: int = 16) -> bytes:
    h = hashlib.blake2b(digest_size=digest_size, person=_PERSON)
    h.update(_encode(parts))
    return h.digest()


def hash_hex128(*parts: Part) -> str:
    """128-bit hex digest; used for content ids and prompt hashes."""
    return hash_bytes(*parts, digest_size=16).hex()


def hash_u64(*parts: Part) -> int:
    return int.from_bytes(hash_bytes(*parts, digest_size=8), "big")


def unit_float(*parts: Part) -> float:
    """Deterministic value in [0, 1) derived from the parts."""
    return hash_u64(*parts) / 2.0**64


def derive_seed(seed: int, *labels: Part) -> int:
    """Derive a 63-bit sub-seed; one global seed fans out per module/purpose."""
    return hash_u64(seed, *labels) >> 1


def content_id(text: str, source: str) -> str:
    """Stable id for documents that arrive without one."""
    return hash_hex128("doc", text, source)

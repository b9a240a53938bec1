"""Hash-derived RNG streams for reproducible, independently keyed randomness.

Philox is counter-based, so distinct 128-bit keys give independent streams
and identical keys give identical draws across runs and platforms.
"""

from __future__ import annotations

import hashlib
from typing import Any

import numpy as np


def _feed(h: "hashlib._Hash", part: Any) -> None:
    if isinstance(part, bytes):
        h.update(b"b")
        h.update(part)
    elif isinstance(part, str):
        h.update(b"s")
        h.update(part.encode())
    elif isinstance(part, bool):
        h.update(b"o1" if part else b"o0")
    elif isinstance(part, int):
        h.update(b"i")
        h.update(part.to_bytes(16, "little", signed=True))
    elif isinstance(part, (tuple, list)):
        h.update(b"(")
        for item in part:
            _feed(h, item)
        h.update(b")")
    else:
        raise TypeError(f"unhashable seed part: {type(part).__name__}")
    h.update(b"\x1f")


def digest(*parts: Any) -> bytes:
    """16-byte stable digest of a nested (int | str | bytes | tuple) key."""
    h = hashlib.blake2b(digest_size=16)
    for part in parts:
        _feed(h, part)
    return h.digest()


def stable_rng(*parts: Any) -> np.random.Generator:
    """A fresh Generator keyed by the given parts; same parts, same stream."""
    key = int.from_bytes(digest(*parts), "little")
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(*parts: Any) -> int:
    """A 63-bit seed derived from the given parts."""
    return int.from_bytes(digest(*parts)[:8], "little") >> 1

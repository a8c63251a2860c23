"""Deterministic stream derivation.

Every random draw in the package comes from a Philox counter-based generator
whose 128-bit key is a SHA-256 hash of a canonical string built from the
base seed plus a tuple of context parts (cell coordinates, run index,
purpose tag, ...).  Two streams with different contexts never collide, and
the same context always reproduces the same stream, independent of platform
and of the order in which streams are created.
"""

from __future__ import annotations

import hashlib

import numpy as np

_KEY_MASK = (1 << 128) - 1


def _canonical(part) -> str:
    if isinstance(part, float):
        # repr is the shortest round-trip form, stable across platforms
        return repr(part)
    if isinstance(part, (int, np.integer)):
        return str(int(part))
    if isinstance(part, str):
        return part
    if isinstance(part, (tuple, list)):
        return "(" + ",".join(_canonical(p) for p in part) + ")"
    raise TypeError(f"cannot canonicalize seed part of type {type(part)!r}")


def derive_key(base_seed: int, *parts) -> int:
    """128-bit Philox key, a stable hash of (base_seed, *parts)."""
    text = _canonical(base_seed) + "|" + "|".join(_canonical(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little") & _KEY_MASK


def stream(base_seed: int, *parts) -> np.random.Generator:
    """Independent generator for the given context."""
    return np.random.Generator(np.random.Philox(key=derive_key(base_seed, *parts)))

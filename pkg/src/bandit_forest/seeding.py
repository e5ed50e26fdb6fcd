"""Deterministic cross-platform seed derivation.

Child seeds are produced by folding tagged parts through a splitmix64-style
mixer, so a run is reproducible from its global seed on any platform
(Python's salted ``hash`` is never used). String parts are folded through
their SHA-256 digest.
"""

from __future__ import annotations

import hashlib

__all__ = ["splitmix64", "derive_seed"]

_MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def _as_int(part) -> int:
    if isinstance(part, str):
        return int.from_bytes(hashlib.sha256(part.encode()).digest()[:8], "little")
    return int(part) & _MASK


def derive_seed(*parts) -> int:
    """Mix integer or string parts into one 64-bit seed."""
    acc = 0x243F6A8885A308D3
    for part in parts:
        acc = splitmix64(acc ^ _as_int(part))
    return acc

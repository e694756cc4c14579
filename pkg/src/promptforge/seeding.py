"""Deterministic keyed randomness shared across the package.

Every random draw is produced by a counter-based generator keyed on
``(seed, tag)``, so the value of any named parameter or sample stream is
independent of the order in which other streams are consumed.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK = (1 << 64) - 1

INIT_STD = 0.02


def hash64(text: str) -> int:
    """Stable 64-bit hash of a string (process- and platform-independent)."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def keyed_generator(seed: int, tag: str) -> np.random.Generator:
    key = np.array([seed & _MASK, hash64(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def keyed_normal(seed: int, tag: str, shape, std: float = INIT_STD) -> np.ndarray:
    """normal(0, std) array whose values depend only on (seed, tag, shape)."""
    return keyed_generator(seed, tag).normal(0.0, std, size=shape)

"""Keyed, counter-based random streams.

Every random draw in the package goes through ``stream(seed, *keys)`` so that
independent consumers never share state and the draw order of one consumer
cannot perturb another.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_words(key) -> list[int]:
    if isinstance(key, (int, np.integer)):
        return [int(key) & _MASK64]
    digest = hashlib.blake2b(str(key).encode(), digest_size=8).digest()
    return [int.from_bytes(digest, "little")]


def stream(seed: int, *keys) -> np.random.Generator:
    """Return a Philox generator keyed by ``seed`` and an arbitrary key path."""
    words = [int(seed) & _MASK64]
    for key in keys:
        words.extend(_key_words(key))
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))

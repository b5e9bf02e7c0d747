"""Counter-based random streams.

Every random draw in the package comes from a Philox generator whose key is
derived from ``(seed, *keys)``.  A stream is therefore a pure function of its
address, so trials can be scheduled on any number of workers in any order and
still reproduce the same numbers.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["stream", "derive_seed", "STREAM_SAMPLE", "STREAM_EVAL", "STREAM_SIGNS",
           "STREAM_INIT", "STREAM_SPLIT", "STREAM_MODEL"]

# named sub-streams so different consumers never share draws
STREAM_SAMPLE = 1
STREAM_EVAL = 2
STREAM_SIGNS = 3
STREAM_INIT = 4
STREAM_SPLIT = 5
STREAM_MODEL = 6


def _key_words(seed: int, keys: tuple[int, ...]) -> list[int]:
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for k in keys:
        if isinstance(k, str):
            k = int.from_bytes(hashlib.sha256(k.encode()).digest()[:8], "little")
        if int(k) < 0:
            raise ValueError("stream keys must be non-negative")
        words.append(int(k) & 0xFFFFFFFFFFFFFFFF)
    return words


def derive_seed(seed: int, *keys: int | str) -> int:
    """Collapse an address ``(seed, *keys)`` into a single 64-bit integer."""
    ss = np.random.SeedSequence(_key_words(seed, keys))
    return int(ss.generate_state(1, np.uint64)[0])


def stream(seed: int, *keys: int | str) -> np.random.Generator:
    """Return the Philox generator addressed by ``(seed, *keys)``.

    String keys are hashed, so ``stream(7, "em-gmm", 3, 12)`` is a valid
    address.  The counter always starts at zero.
    """
    ss = np.random.SeedSequence(_key_words(seed, keys))
    key = ss.generate_state(2, np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

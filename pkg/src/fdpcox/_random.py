"""Named, counter-based random streams.

A stream is identified by a root seed and a tuple of keys (ints or strings),
e.g. ``rng_stream(7, "noise", round_k, server_id)``.  Distinct key tuples give
statistically independent Philox generators, so replications, servers and
mechanism invocations can run in any order and still be reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("integer stream keys must be nonnegative")
        return int(key)
    if isinstance(key, str):
        # stable across interpreter runs, unlike hash()
        return zlib.crc32(key.encode("utf-8")) | (1 << 32)
    raise TypeError(f"unsupported stream key {key!r}")


def rng_stream(seed, *keys) -> np.random.Generator:
    """Generator for the stream ``(seed, *keys)``; ``seed`` may itself be a
    tuple ``(root, *prefix_keys)``."""
    if isinstance(seed, tuple):
        seed, keys = seed[0], tuple(seed[1:]) + keys
    ss = np.random.SeedSequence(entropy=None if seed is None else int(seed), spawn_key=tuple(_key_to_int(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))


def as_generator(random_state) -> np.random.Generator:
    """Accept a seed, a Generator, or None (fresh entropy)."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None:
        return np.random.default_rng()
    return rng_stream(random_state)

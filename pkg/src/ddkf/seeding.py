"""Counter-based seed derivation for reproducible Monte Carlo runs.

Every random stream is identified by a master seed plus an integer key path,
so trial ``i`` always sees the same draws no matter how many trials run.
"""

import numpy as np

# stream identifiers; part of the key path so unrelated streams never collide
ONLINE = 1
BATCH = 2
CLOSED_LOOP = 3


def child_rng(seed, *key):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *key)``."""
    if seed is None:
        raise ValueError("a master seed is required for reproducible streams")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def as_rng(rng):
    """Accept a Generator, an integer seed or None (fresh entropy)."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)

"""Reproducible random streams.

Each stream is a Philox (counter based) generator keyed by a root seed and a
tuple of stream ids, so trials can run in any order or in parallel.
"""
import numpy as np


def make_rng(seed, *stream):
    """Return a generator for ``seed`` and stream ids ``stream``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


def as_rng(seed_or_rng):
    if isinstance(seed_or_rng, np.random.Generator):
        return seed_or_rng
    return make_rng(0 if seed_or_rng is None else seed_or_rng)

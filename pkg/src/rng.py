"""Seed splitting.

A master seed plus a tuple of non-negative integer keys identifies one
independent stream. Streams are built with ``numpy.random.SeedSequence``
using the keys as ``spawn_key``, so a stream never depends on how many
other streams were drawn before it or in which order.
"""
import numpy as np

# stream roles
PATH = 0
FEATURES = 1
OUTCOMES = 2
SHUFFLE = 3
PERTURBATION = 4
SHOCKS = 5
HISTORICAL = 10
CURRENT = 11
EVALUATION = 12
FIT = 20


def _sequence(seed: int, keys: tuple[int, ...]) -> np.random.SeedSequence:
    if seed < 0 or any(k < 0 for k in keys):
        raise ValueError("seeds and stream keys must be non-negative")
    return np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))


def substream(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(_sequence(seed, keys))


def derive_seed(seed: int, *keys: int) -> int:
    """Integer seed for APIs that want an int (e.g. sklearn ``random_state``)."""
    return int(_sequence(seed, keys).generate_state(1, dtype=np.uint32)[0])

"""Deterministic RNG derivation.

Every stochastic step derives its generator from a root seed plus a
structural key (example id, epoch, grid cell, ...) so results do not
depend on iteration or worker order.
"""

from __future__ import annotations

import math

import numpy as np


def rng_for(seed: int, *key: int) -> np.random.Generator:
    """Generator for (seed, key); same arguments always yield the same stream."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=key)))


def round_count(x: float) -> int:
    """Round half up; used for every round(rate * N) quota in the package."""
    return int(math.floor(x + 0.5))

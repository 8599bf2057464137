"""Deterministic random-stream derivation.

Every stochastic component draws from its own ``numpy.random.Generator``
derived from the master experiment seed plus a structured path (purpose,
round, client id, ...).  Streams for distinct paths are statistically
independent, so client sessions may run concurrently without sharing rng
state, and any stream can be re-derived from scratch — which is what makes
checkpoint resume and the bitwise-determinism guarantees possible.
"""

from __future__ import annotations

import numpy as np

# Purpose tags; values are part of the determinism contract, do not renumber.
SPLIT = 1
MODEL_INIT = 2
SELECTION = 3
SERVER_SESSION = 4
CLIENT_SESSION = 5
PROJECTOR_INIT = 6
CLIENT_STREAM = 7


def derive_rng(master_seed: int, *path: int) -> np.random.Generator:
    """Return a fresh PCG64 generator for ``(master_seed, *path)``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence((int(master_seed), *map(int, path)))))


def spawn_seed(rng: np.random.Generator) -> int:
    """Draw a 63-bit seed, e.g. for a per-epoch shuffle."""
    return int(rng.integers(0, 2**63 - 1))


def generator_state(rng: np.random.Generator) -> dict:
    """JSON-serializable snapshot of a generator's state."""
    return rng.bit_generator.state


def restore_generator(state: dict) -> np.random.Generator:
    """Rebuild a generator from a :func:`generator_state` snapshot."""
    bg = np.random.PCG64()
    bg.state = state
    return np.random.Generator(bg)

"""Deterministic per-purpose random streams.

Every random draw in the package comes from a generator keyed by
``(master_seed, purpose, *indices)``.  Keys are pure data, so results do not
depend on scheduling order or worker count, and adding a new consumer (say,
readout noise) never shifts the draws of an existing one (say, disorder).
"""

from __future__ import annotations

import numpy as np

# Fixed codes; never reorder, only append.
PURPOSES = {
    "disorder": 1,
    "shots": 2,
    "readout": 3,
    "trajectories": 4,
    "gibbs": 5,
    "calibration": 6,
    "misc": 7,
}


def _seed_sequence(master_seed: int, purpose: str, *indices: int) -> np.random.SeedSequence:
    try:
        code = PURPOSES[purpose]
    except KeyError:
        raise ValueError(f"unknown RNG purpose {purpose!r}") from None
    key = (code,) + tuple(int(i) for i in indices)
    return np.random.SeedSequence(int(master_seed), spawn_key=key)


def derive_seed(master_seed: int, purpose: str, *indices: int) -> int:
    """64-bit seed token for one stream."""
    state = _seed_sequence(master_seed, purpose, *indices).generate_state(1, np.uint64)
    return int(state[0])


def stream(master_seed: int, purpose: str, *indices: int) -> np.random.Generator:
    return np.random.default_rng(_seed_sequence(master_seed, purpose, *indices))

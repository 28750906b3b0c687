"""
Seed derivation: every random stream descends from one root seed.

A repetition's stream is ``SeedSequence(entropy=root, spawn_key=(rep,))`` and a
component inside it appends its own key, so any row of an experiment can be
regenerated in isolation and sweep values share common random numbers.
"""

import numpy as np


def derive_seed(root: int, *path: int) -> np.random.SeedSequence:
    """Seed sequence for the component at ``path`` below ``root``."""
    return np.random.SeedSequence(entropy=root, spawn_key=tuple(int(p) for p in path))

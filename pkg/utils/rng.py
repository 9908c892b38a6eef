"""Seeded random streams for reproducible trials.

Every trial draws from its own substream keyed by (seed, trial index), so a
trial's outcome does not depend on how many trials run before it or on
which worker process runs it.
"""
from typing import Optional

import numpy as np

# Largest seed accepted on the command line
MAX_SEED = 2 ** 64 - 1


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Generator for one trial of a seeded batch."""
    if not 0 <= seed <= MAX_SEED:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    if trial < 0:
        raise ValueError(f"trial index must be nonnegative, got {trial}")
    return np.random.default_rng(np.random.SeedSequence([seed, trial]))


def make_rng(seed: Optional[int] = None) -> np.random.Generator:
    """Generator seeded directly; unseeded streams draw OS entropy."""
    return np.random.default_rng(seed)

"""Deterministic seed derivation.

Every stochastic routine in the library takes an explicit integer seed.
Child seeds are derived from an integer path (root seed plus index tags),
so concurrent or reordered execution of sibling tasks cannot change
results.
"""

from __future__ import annotations

import numpy as np


def derive_seed(*path: int) -> int:
    """Derive a child seed from an integer path. Pure function of the path."""
    for p in path:
        if p < 0:
            raise ValueError(f"seed path entries must be non-negative, got {p}")
    return int(np.random.SeedSequence(list(path)).generate_state(1, np.uint64)[0])


def generator(*path: int) -> np.random.Generator:
    """A fresh Generator keyed by the integer path."""
    for p in path:
        if p < 0:
            raise ValueError(f"seed path entries must be non-negative, got {p}")
    return np.random.default_rng(np.random.SeedSequence(list(path)))

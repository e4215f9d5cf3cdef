"""Shared helpers: error type, seed derivation, rounding."""

from __future__ import annotations

import math

import numpy as np


class CohortSplitError(RuntimeError):
    """Raised for invalid inputs or unsatisfiable requests anywhere in the pipeline."""


def derive_seed(master: int, *path: int) -> int:
    """Derive a child seed from a master seed and an index path.

    Children are independent streams: (seed, 0), (seed, 1), ... never collide
    with each other or with the master. Stable across runs and platforms.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, np.uint64)[0])


def round_half_up(x: float) -> int:
    """Round to nearest integer, halves away from zero (2.5 -> 3).

    Used for split sizing; Python's banker's rounding would send a .5
    remainder to the even neighbour, which surprises users sizing test sets.
    """
    return int(math.floor(x + 0.5))

"""Deterministic seed derivation for per-example RNG streams."""

from __future__ import annotations

import numpy as np


def derive_seed(*parts: int) -> int:
    """Hash a tuple of integers into a 64-bit seed.

    Used to give each (example, epoch, ...) its own independent stream while
    keeping whole runs reproducible from a single global seed.
    """
    ss = np.random.SeedSequence([int(p) & 0xFFFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0])

"""Seeded random number generation.

All randomness in the package flows through 64-bit-seeded PCG64 generators so
that every pipeline replays bit-identically.  The algorithm id written into
scenario and checkpoint files is :data:`RNG_ALGORITHM`.
"""

from __future__ import annotations

import numpy as np

RNG_ALGORITHM = "numpy-pcg64"


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Generator for ``seed``, optionally forked into a named substream.

    ``stream`` keys let independent components (batches, rollout samples,
    restarts) draw from non-overlapping, reproducible streams of the same
    master seed.
    """
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in stream]])
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, *stream: int) -> int:
    """Deterministic 63-bit child seed for handing to nested components."""
    ss = np.random.SeedSequence([int(seed), *[int(k) for k in stream]])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)

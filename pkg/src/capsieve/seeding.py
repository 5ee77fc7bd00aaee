"""Deterministic random streams.

Every sampling operation in the package draws from Philox4x64, a
counter-based generator whose output is identical across platforms and
numpy builds for a given key. Independent streams are derived from a root
seed plus an integer path (e.g. per bin, per class, per shard), so
parallel work never shares or splits a sequential stream.
"""

from __future__ import annotations

import numpy as np


def stream(seed: int, *path: int) -> np.random.Generator:
    """Return the Philox stream for `seed` at the given derivation path."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(path))
    return np.random.Generator(np.random.Philox(ss))

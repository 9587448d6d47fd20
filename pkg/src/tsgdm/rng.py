"""Deterministic random-stream derivation.

Every stochastic choice in a run descends from one integer seed. A substream
is keyed by a tuple of small integers (a purpose tag plus loop indices), so
independent consumers get independent generators no matter in which order
they happen to draw.
"""

from __future__ import annotations

import numpy as np

RandomStream = np.random.Generator

# Purpose tags for substream keys. Distinct tags guarantee that, say, batch
# sampling never shares a stream with candidate generation.
STREAM_BATCH = 0
STREAM_CANDIDATES = 1
STREAM_TASK = 2
STREAM_VARIANCE = 3

_UINT64_MASK = (1 << 64) - 1


def substream(seed: int, *key: int) -> RandomStream:
    """Generator for ``key`` under the master ``seed``.

    The same (seed, key) pair always yields the same stream; different keys
    yield statistically independent streams.
    """
    entropy = int(seed) & _UINT64_MASK
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=tuple(int(k) for k in key)))

"""Deterministic random-stream derivation.

Every stochastic routine in the package takes an explicit generator or a
(seed, key...) pair. Substreams are derived with ``numpy.random.SeedSequence``
so that results are bit-identical regardless of evaluation order or worker
count: a stream is a pure function of the master seed and its key tuple, never
of a shared sequential generator.
"""

import numpy as np


def substream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream identified by ``(seed, *key)``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.PCG64(ss))

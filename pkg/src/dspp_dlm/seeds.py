"""Deterministic seed derivation.

Every stochastic operation in this package owns an integer seed. Child
seeds are derived from a master seed and a tuple of integer key parts via
``numpy.random.SeedSequence``, so that

* the same (master, key) always yields the same stream,
* distinct keys yield statistically independent streams,
* results never depend on execution order (each consumer owns its seed).

Key conventions used across the package (first key part is a purpose tag):

====  =========================================
tag   purpose
====  =========================================
1     latent intensity path noise, per sample
2     observation count draws, per sample
3     inner Monte Carlo paths, per (sample, path)
4     minibatch shuffling, per epoch
5     parameter initialisation, per network
6     run-through replications, per (replication, stage)
====  =========================================
"""

from __future__ import annotations

import numpy as np

PATH = 1
COUNTS = 2
INNER = 3
SHUFFLE = 4
INIT = 5
RUNTHROUGH = 6


def derive(master_seed: int, *key: int) -> int:
    """Derive a child seed from ``master_seed`` and integer key parts."""
    ss = np.random.SeedSequence([int(master_seed), *[int(k) for k in key]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def rng(seed: int, *key: int) -> np.random.Generator:
    """A fresh PCG64 generator for (seed, key...)."""
    if key:
        seed = derive(seed, *key)
    return np.random.default_rng(seed)

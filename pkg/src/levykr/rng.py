"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(master seed, stream kind, index...)``, so results never depend on call
order or on how work is scheduled.
"""
import numpy as np

# stream kinds
INIT = 1
JUMPS = 2
INIT_SECOND = 3
MISC = 9


def stream(seed, *key):
    """Independent generator for the stream ``key`` under ``seed``."""
    if int(seed) < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def seed_ladder(master, n):
    return [int(master) + i for i in range(n)]

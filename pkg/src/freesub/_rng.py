"""Counter-based random streams keyed by (seed, purpose label, index)."""

import zlib

import numpy as np

SEED_MAX = 2**64 - 1


def check_seed(seed):
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream(seed, label, index=0):
    """Independent generator for one (seed, label, index) triple.

    Streams do not depend on the order in which they are requested, so
    trials can run in any order or in parallel and still reproduce.
    """
    key = [check_seed(seed), zlib.crc32(label.encode()), int(index)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(key)))

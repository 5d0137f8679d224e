import zlib

import numpy as np


def substream(seed, name, *keys):
    """Independent generator for ``(seed, name, *keys)``; stable across runs and platforms."""
    entropy = [int(seed) & 0xFFFFFFFF, zlib.crc32(name.encode())]
    entropy.extend(int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(entropy))

"""
Counter-based, splittable random streams.

Every random draw in the simulator comes from a stream keyed by
(global seed, purpose tag, counters...), so results never depend on the
order in which clients or grid entries are scheduled.
"""

import zlib

import numpy as np


def _tag_key(tag: str) -> int:
    return zlib.crc32(tag.encode("utf-8"))


def stream(seed: int, tag: str, *counters: int) -> np.random.Generator:
    """
    Build an independent Philox generator for one purpose.

    Args:
        seed: Global experiment seed
        tag: Purpose of the stream (e.g. "client", "participants")
        counters: Round index, client id, or any other integer coordinates

    Returns:
        numpy Generator backed by the Philox counter-based bit generator
    """
    entropy = [int(seed) & 0xFFFFFFFF, _tag_key(tag), *(int(c) & 0xFFFFFFFF for c in counters)]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def derive_seed(seed: int, tag: str, *counters: int) -> int:
    """Derive a plain integer seed from a stream (for APIs taking an int seed)."""
    return int(stream(seed, tag, *counters).integers(0, 2**31 - 1))

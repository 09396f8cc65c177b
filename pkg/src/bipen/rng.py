"""Counter-based random substreams.

Every stochastic component draws from a Philox generator keyed by a user
seed plus a tuple of purpose tags, so that independent pieces of a run
(gradient oracle, probe sampling, seed replicates, epsilon grid cells) get
non-overlapping and exactly reproducible streams.
"""

import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _tag_to_int(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf8"))


def substream(seed: int, *tags) -> np.random.Generator:
    """Generator for the (seed, *tags) substream.

    Same arguments always give a generator in the same state; distinct tag
    tuples give statistically independent streams.
    """
    ss = np.random.SeedSequence(
        entropy=int(seed) & _MASK64,
        spawn_key=tuple(_tag_to_int(t) for t in tags),
    )
    return np.random.Generator(np.random.Philox(ss))

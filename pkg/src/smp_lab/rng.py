"""Counter-based random streams.

Every random quantity is drawn from a Philox generator keyed by
``(master_seed, stream)`` whose counter encodes the path block.  A path's
draws therefore depend only on the seed, the stream and the path index,
never on how many workers generated the ensemble or in which order.
"""

import numpy as np

from .errors import ConfigurationError
from .parallel import PATH_BLOCK

STREAM_BROWNIAN = 1
STREAM_DELAY = 2
STREAM_PROBE = 3
STREAM_PERTURBATION = 4
STREAM_CANDIDATE = 5

_U64 = (1 << 64) - 1


def check_seed(seed):
    seed = int(seed)
    if seed < 0 or seed > _U64:
        raise ConfigurationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def stream_generator(master_seed, stream, block=0):
    """Generator for one (seed, stream, block) counter slot."""
    bitgen = np.random.Philox(key=np.array([check_seed(master_seed), int(stream)], dtype=np.uint64),
                              counter=[0, int(block), 0, 0])
    return np.random.Generator(bitgen)


def block_generator(master_seed, stream, start):
    """Generator for the fixed-size path block that begins at ``start``."""
    if start % PATH_BLOCK:
        raise ValueError("block start must be a multiple of PATH_BLOCK")
    return stream_generator(master_seed, stream, start // PATH_BLOCK)

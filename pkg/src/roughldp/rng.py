"""Counter-based random streams.

Every random draw in the package comes from a Philox stream addressed by
``(seed, tag, block)``. Paths are generated in fixed-size blocks, so the
numbers a given path receives depend only on the seed and its index, never
on how blocks are scheduled across workers.
"""

from concurrent.futures import ThreadPoolExecutor

import numpy as np

# stream tags
VOL_DRIVER = 0
PRICE_NOISE = 1
OPTIMIZER_STARTS = 2
PILOT = 3

DEFAULT_BLOCK = 4096
_MASK64 = (1 << 64) - 1


def stream(seed, tag, block=0):
    """Return a generator for block ``block`` of stream ``tag``."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be a non-negative integer")
    key = np.array([seed & _MASK64, (int(tag) << 32) ^ (seed >> 64)],
                   dtype=np.uint64)
    # block index lives in the top counter word; draws within a block only
    # advance the low words
    counter = np.array([0, 0, 0, int(block)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def block_ranges(n_items, block_size=DEFAULT_BLOCK):
    """Split ``range(n_items)`` into ``(block_index, start, stop)`` triples."""
    out = []
    for b, start in enumerate(range(0, n_items, block_size)):
        out.append((b, start, min(start + block_size, n_items)))
    return out


def map_blocks(func, blocks, workers=1):
    """Apply ``func`` to every block and return results in block order."""
    if workers is None or workers <= 1 or len(blocks) <= 1:
        return [func(*blk) for blk in blocks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda blk: func(*blk), blocks))

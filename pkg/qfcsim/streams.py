"""Record layouts and reproducible random streams for block-parallel stages.

Every stochastic stage draws from a Philox generator keyed by
(seed, stage, block). Blocks are fixed ranges of pulse indices, so the
output depends on the seed and BLOCK_PULSES only, never on thread count.
"""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .config import BLOCK_PULSES, THREADS
from .errors import OrderingError

logger = logging.getLogger(__name__)

POL_H = 0
POL_V = 1

ORIGIN_SIGNAL = 0
ORIGIN_MULTIPHOTON = 1
ORIGIN_NOISE = 2
ORIGIN_NAMES = {ORIGIN_SIGNAL: "signal", ORIGIN_MULTIPHOTON: "multiphoton", ORIGIN_NOISE: "noise"}

PHOTON_DTYPE = np.dtype(
    [("t", "f8"), ("nu", "f8"), ("pol", "u1"), ("origin", "u1"), ("pulse", "i8")]
)

STAGES = {
    "emission": 1,
    "blinking": 2,
    "diffusion": 3,
    "conversion": 4,
    "noise": 5,
    "seed_modes": 6,
    "seed_draw": 7,
    "filter": 8,
    "hbt": 9,
    "hom": 10,
    "detect": 11,
    "lifetime": 12,
    "rates": 13,
    "sweep": 14,
    "coherent": 15,
}


def empty_photons(n=0):
    return np.zeros(n, dtype=PHOTON_DTYPE)


def stage_rng(seed, stage, block=0):
    """Counter-based generator for one (seed, stage, block) triple."""
    key = np.random.SeedSequence([int(seed), STAGES[stage], int(block)])
    return np.random.Generator(np.random.Philox(key))


def pulse_blocks(n_pulses, block_pulses=BLOCK_PULSES):
    """Split [0, n_pulses) into (start, stop) ranges of block_pulses pulses."""
    return [(start, min(start + block_pulses, n_pulses)) for start in range(0, n_pulses, block_pulses)]


def map_blocks(fn, items, threads=None):
    """Apply fn(index, item) over items, in order, optionally on a thread pool."""
    threads = THREADS if threads is None else threads
    if threads <= 1 or len(items) <= 1:
        return [fn(i, item) for i, item in enumerate(items)]
    logger.debug(f"Running {len(items)} blocks on {threads} threads")
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, range(len(items)), items))


def group_by_block(photons, block_pulses=BLOCK_PULSES):
    """Return [(block_index, sub_stream), ...] grouping records by pulse block."""
    if len(photons) == 0:
        return []
    block_ids = photons["pulse"] // block_pulses
    order = np.argsort(block_ids, kind="stable")
    sorted_ids = block_ids[order]
    cuts = np.flatnonzero(np.diff(sorted_ids)) + 1
    return [
        (int(sorted_ids[idx[0]]), photons[idx])
        for idx in np.split(order, cuts)
    ]


def time_sorted(records, field="t"):
    """Stable sort of a record array (or plain array) by time."""
    keys = records[field] if records.dtype.names else records
    return records[np.argsort(keys, kind="stable")]


def require_ordered(times, what="stream"):
    """Raise OrderingError unless times are non-decreasing."""
    if len(times) > 1:
        bad = np.flatnonzero(np.diff(times) < 0)
        if len(bad):
            raise OrderingError(f"{what} is not time-ordered at record {int(bad[0]) + 1}")

"""Deterministic seed fan-out.

One global 64-bit seed reproduces an entire evaluation campaign.  Module
seeds are derived by hashing the global seed together with a label path
(e.g. ``derive_seed(7, "measure", "breakaway", 12)``), so independent
subsystems never share a stream and the mapping is stable across platforms
and Python versions.  Per-item generators use the Philox counter-based bit
generator keyed on (derived seed, item index), which makes results
independent of chunking and worker count.
"""

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def derive_seed(global_seed, *labels):
    """Hash a global seed and a label path into a 64-bit subsystem seed."""
    h = hashlib.sha256()
    h.update(int(global_seed).to_bytes(8, "little", signed=False))
    for label in labels:
        h.update(b"\x1f")
        h.update(str(label).encode("utf-8"))
    return int.from_bytes(h.digest()[:8], "little")


def generator(seed):
    """A Philox-backed generator for one subsystem."""
    return np.random.Generator(np.random.Philox(key=int(seed) & MASK64))


def item_generator(seed, index):
    """Counter-based stream for item ``index`` under a subsystem seed.

    Streams for different indices are independent regardless of the order
    or grouping in which they are consumed.
    """
    key = np.array([int(seed) & MASK64, int(index) & MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))

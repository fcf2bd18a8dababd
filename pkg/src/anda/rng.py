"""Hash-keyed deterministic random streams.

Every stochastic consumer gets its own counter-based generator derived
from (seed, *path), so results never depend on scheduling order or on
how many draws other consumers made from their own streams.
"""

import hashlib

import numpy as np


def _digest(seed, path):
    h = hashlib.sha256()
    h.update(b"anda.rng")
    for part in (int(seed), *path):
        if isinstance(part, (int, np.integer)):
            h.update(b"i")
            h.update(int(part).to_bytes(16, "little", signed=True))
        elif isinstance(part, str):
            data = part.encode("utf-8")
            h.update(b"s")
            h.update(len(data).to_bytes(4, "little"))
            h.update(data)
        else:
            raise TypeError(f"stream path parts must be ints or strings, got {part!r}")
    return h.digest()


def stream(seed, *path):
    """Return a numpy Generator keyed by (seed, *path).

    Identical arguments always yield the identical draw sequence; any
    change to the seed or to the path yields an independent stream.
    """
    digest = _digest(seed, path)
    key = np.frombuffer(digest[:16], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def child_seed(seed, *path):
    """Derive a non-negative 63-bit integer seed from (seed, *path)."""
    digest = _digest(seed, path)
    return int.from_bytes(digest[16:24], "little") >> 1

"""Schedule-independent random streams keyed by tuples of ids."""

import hashlib

import numpy as np


def stream_key(*keys) -> int:
    """Stable 128-bit integer for a tuple of str/int keys (unlike the salted builtin ``hash``)."""
    h = hashlib.blake2b(digest_size=16)
    for k in keys:
        h.update(repr(k).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_rng(*keys) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(stream_key(*keys))))

"""Portable seeded random streams.

Every stream is a numpy ``Generator`` over the PCG64 bit generator, seeded
through ``SeedSequence`` with the user seed plus a 64-bit key derived by
BLAKE2b from string labels (row ids, clip ids, stage names). Streams are
therefore independent of processing order and identical across platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def key64(*parts: object) -> int:
    h = hashlib.blake2b(digest_size=8)
    for p in parts:
        h.update(str(p).encode("utf-8"))
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little")


def derive_rng(seed: int, *parts: object) -> np.random.Generator:
    """Return a PCG64 generator keyed by ``seed`` and the given labels."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, key64(*parts)])
    return np.random.Generator(np.random.PCG64(ss))

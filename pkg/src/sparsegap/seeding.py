"""Stable seed derivation.

Python's ``hash`` is salted per process, so derived seeds go through sha256
of a canonical string instead.
"""

import hashlib

import numpy as np


def derive_seed(*parts) -> int:
    """Map an arbitrary tuple of printable parts to a 63-bit seed."""
    key = "\x1f".join(repr(p) for p in parts).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def rng_for(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))

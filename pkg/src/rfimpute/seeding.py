"""Deterministic seed derivation.

Every stochastic step draws its seed from ``derive_seed(master, *keys)`` so
results depend only on the master seed and the step identity, never on call
order or thread scheduling.
"""
import hashlib

import numpy as np

SEED_BITS = 63


def derive_seed(master: int, *keys) -> int:
    h = hashlib.sha256(str(int(master)).encode())
    for key in keys:
        h.update(b"\x1f")
        h.update(str(key).encode())
    return int.from_bytes(h.digest()[:8], "little") & ((1 << SEED_BITS) - 1)


def rng_for(master: int, *keys) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, *keys))

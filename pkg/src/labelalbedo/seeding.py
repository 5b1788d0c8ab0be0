"""Stable seed derivation.

Every derived seed is the first 8 bytes (little-endian) of a BLAKE2b digest
over the parts, each part tagged by type. The mapping is independent of
Python's hash randomization, platform and worker count.
"""

import hashlib
import struct

import numpy as np

U64_MAX = 2**64 - 1


def mix_seed(*parts):
    h = hashlib.blake2b(digest_size=8, person=b"labelalbedo")
    for p in parts:
        if isinstance(p, bool):
            raise TypeError("bool is not a seed part")
        if isinstance(p, int):
            if not 0 <= p <= U64_MAX:
                raise ValueError(f"integer seed part out of 64-bit range: {p}")
            h.update(b"i" + struct.pack("<Q", p))
        elif isinstance(p, str):
            b = p.encode("utf-8")
            h.update(b"s" + struct.pack("<Q", len(b)) + b)
        else:
            raise TypeError(f"unsupported seed part {type(p).__name__}")
    return struct.unpack("<Q", h.digest())[0]


def rng(*parts):
    """numpy Generator (PCG64) seeded from ``mix_seed(*parts)``."""
    return np.random.default_rng(mix_seed(*parts))

"""Deterministic, domain-separated random streams.

Every stochastic quantity in the pipeline draws from a generator derived
from a key path such as ``(master, "train", cell, "frame", f)``.  Streams
for different paths are statistically independent, and removing one
consumer (e.g. dropping a jammer from a scenario) never shifts the draws
of the others.
"""

import hashlib

import numpy as np

_MASK32 = 0xFFFFFFFF


def _key_to_words(part) -> list[int]:
    if isinstance(part, bool):
        raise TypeError("bool is ambiguous as a seed key part")
    if isinstance(part, (int, np.integer)):
        part = int(part)
        words = []
        # split arbitrary-size ints into 32-bit words, sign folded in
        sign = 1 if part >= 0 else 2
        part = abs(part)
        while True:
            words.append(part & _MASK32)
            part >>= 32
            if part == 0:
                break
        words.append(sign)
        return words
    if isinstance(part, str):
        digest = hashlib.sha256(part.encode("utf-8")).digest()
        return [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    raise TypeError(f"seed key parts must be int or str, got {type(part)!r}")


def seed_sequence(*parts) -> np.random.SeedSequence:
    """Build a SeedSequence from a mixed int/str key path."""
    if not parts:
        raise ValueError("at least one seed key part is required")
    entropy: list[int] = []
    for part in parts:
        entropy.extend(_key_to_words(part))
    return np.random.SeedSequence(entropy)


def rng_from(*parts) -> np.random.Generator:
    """Generator for the stream identified by the key path."""
    return np.random.default_rng(seed_sequence(*parts))

"""Deterministic named substreams derived from one master seed.

Every source of randomness in a run flows from the master seed through
``substream(master, *names)``. Names are hashed into extra SeedSequence
entropy words, so two streams with different names are statistically
independent and adding a new named stage never perturbs existing ones.
"""

import hashlib

import numpy as np


def _name_word(name) -> int:
    digest = hashlib.blake2b(str(name).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(master_seed: int, *names) -> np.random.SeedSequence:
    entropy = [int(master_seed)] + [_name_word(n) for n in names]
    return np.random.SeedSequence(entropy)


def substream(master_seed: int, *names) -> np.random.Generator:
    """Generator for the stage identified by ``names`` under ``master_seed``."""
    return np.random.default_rng(seed_sequence(master_seed, *names))


def spawn_seeds(master_seed: int, count: int, *names) -> np.ndarray:
    """``count`` independent 63-bit integer seeds for child tasks (episodes)."""
    rng = substream(master_seed, *names)
    return rng.integers(0, 2**63 - 1, size=count, dtype=np.int64)

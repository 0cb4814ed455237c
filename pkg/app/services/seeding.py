"""
Deterministic Seeding

One root seed, many named substreams. A substream's generator depends only
on (seed, label), so adding a new consumer never shifts the draws of the
existing ones.
"""

import hashlib

import numpy as np

INIT = "init"
SHUFFLE = "shuffle"
DROPOUT = "dropout"
DATA = "data"
EMBEDDINGS = "embeddings"
GRADCHECK = "gradcheck"


def _label_key(label: str) -> int:
    return int.from_bytes(hashlib.blake2b(label.encode("utf-8"), digest_size=8).digest(), "little")


class RngStreams:
    """Named random substreams derived from a root seed."""

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed must be non-negative, got {seed}")
        self.seed = seed

    def stream(self, label: str) -> np.random.Generator:
        """Fresh generator for `label`, positioned at the start of its stream."""
        return np.random.default_rng(np.random.SeedSequence(entropy=self.seed, spawn_key=(_label_key(label),)))

    def __repr__(self) -> str:
        return f"RngStreams(seed={self.seed})"


def set_global_seed(seed: int) -> RngStreams:
    return RngStreams(seed)

"""Deterministic RNG streams.

Every source of randomness in the package is an explicit
``numpy.random.Generator`` derived from a global seed plus a tuple of
integer/string keys. The derivation is pure, so any stream (an epoch's
shuffle, one sample's augmentation chain) can be reconstructed from the
run seed alone -- this is what makes checkpoint resume exact.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        return int(key) & 0xFFFFFFFF
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "little")


def rng_for(seed: int, *keys) -> np.random.Generator:
    """Return a Generator for the stream identified by ``(seed, *keys)``.

    Same arguments always give the same stream; distinct key tuples give
    statistically independent streams (SeedSequence spawning).
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [_key_to_int(k) for k in keys]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def sample_rng(seed: int, epoch: int, sample_index: int) -> np.random.Generator:
    """Per-sample augmentation stream, a pure function of
    (seed, epoch, sample index) so samples may be processed in any order
    or in parallel without changing the result."""
    return rng_for(seed, "sample", epoch, sample_index)

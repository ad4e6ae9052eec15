"""Deterministic RNG derivation.

Every stochastic quantity in the package is drawn from a PCG64 generator
whose seed sequence is derived from a master seed plus a path of integer or
string labels (trial index, hypothesis tag, subsystem name, ...).  The
derivation is pure, so identical (master, path) pairs give bit-identical
streams regardless of execution order or thread count.
"""

from __future__ import annotations

import zlib

import numpy as np

__all__ = ["seed_sequence", "rng_from", "spawn_seed"]


def _encode(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"seed path keys must be non-negative, got {key}")
        return int(key)
    if isinstance(key, str):
        # crc32 is stable across platforms and python versions
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported seed path key: {key!r}")


def seed_sequence(master: int, *path) -> np.random.SeedSequence:
    """Seed sequence for the stream identified by ``(master, *path)``."""
    return np.random.SeedSequence([_encode(master)] + [_encode(k) for k in path])


def rng_from(master: int, *path) -> np.random.Generator:
    """PCG64 generator for the stream identified by ``(master, *path)``."""
    return np.random.Generator(np.random.PCG64(seed_sequence(master, *path)))


def spawn_seed(master: int, *path) -> int:
    """A derived 32-bit integer seed, for interfaces that take a plain int."""
    return int(seed_sequence(master, *path).generate_state(1, dtype=np.uint32)[0])

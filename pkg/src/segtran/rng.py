"""Named PRNG substreams derived from one master seed."""

from __future__ import annotations

import zlib

import numpy as np


def _key(tag) -> int:
    if isinstance(tag, (int, np.integer)):
        return int(tag) & 0xFFFFFFFF
    return zlib.crc32(str(tag).encode("utf-8"))


def seed_sequence(seed: int, *tags) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(seed), spawn_key=tuple(_key(t) for t in tags))


def substream(seed: int, *tags) -> np.random.Generator:
    """Independent generator for ``(seed, *tags)``; same arguments, same stream."""
    return np.random.Generator(np.random.PCG64(seed_sequence(seed, *tags)))


def derived_seed(seed: int, *tags) -> int:
    """A plain integer seed for ``(seed, *tags)``, e.g. for one sweep point."""
    return int(seed_sequence(seed, *tags).generate_state(1, dtype=np.uint32)[0])


def get_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state


def set_state(rng: np.random.Generator, state: dict) -> None:
    rng.bit_generator.state = state

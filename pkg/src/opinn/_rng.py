"""Named random sub-streams derived from one integer seed."""

import zlib

import numpy as np

STREAMS = ("graph", "init-opinions", "noise", "weights", "batching", "voter")


def stream(seed: int, name: str) -> np.random.Generator:
    """Return an independent generator for ``name`` under ``seed``.

    The stream key is a CRC of the name, so adding new streams never shifts
    existing ones.
    """
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(entropy=int(seed), spawn_key=(key,)))

"""Named random substreams derived from one root seed.

Each consumer asks for its stream by a path such as ``("rollout", 12, 3)``,
so adding draws in one component never shifts the numbers seen by another.
"""

from __future__ import annotations

import hashlib

import numpy as np

SEED_MASK = (1 << 64) - 1


def _key(names: tuple) -> int:
    path = "/".join(str(n) for n in names).encode()
    return int.from_bytes(hashlib.blake2b(path, digest_size=16).digest(), "little")


def substream(seed: int, *names) -> np.random.Generator:
    if not 0 <= seed <= SEED_MASK:
        raise ValueError("seed must be an unsigned 64-bit integer")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, _key(names)])))

"""Counter-based standard normal draws.

Draw ``i`` of a stream depends only on ``(seed, i)``: the stream is cut into
fixed-size blocks and block ``k`` is generated by a Philox generator whose key
is the seed and whose high counter word is ``k``.  Consequently any prefix of
length ``L`` is shared by all longer streams with the same seed, and blocks can
be produced in any order (or concurrently) without changing a single bit.
"""

from __future__ import annotations

import numpy as np

from ._parallel import pmap

BLOCK = 4096
_SEED_MASK = (1 << 64) - 1


def _block(seed: int, k: int, d: int) -> np.ndarray:
    bitgen = np.random.Philox(key=int(seed) & _SEED_MASK, counter=[0, 0, 0, k])
    return np.random.Generator(bitgen).standard_normal((BLOCK, d))


def normal_draws(seed: int, L: int, d: int, threads: int | None = None) -> np.ndarray:
    """Return an ``(L, d)`` array of i.i.d. N(0, 1) draws keyed by ``seed``."""
    if L < 1 or d < 1:
        raise ValueError("L and d must be positive")
    n_blocks = -(-L // BLOCK)
    blocks = pmap(lambda k: _block(seed, k, d), range(n_blocks), threads)
    return np.concatenate(blocks, axis=0)[:L]


def substream_seed(seed: int, *labels: int) -> int:
    """Derive an independent 64-bit seed from a parent seed and integer labels."""
    ss = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=tuple(int(x) for x in labels))
    return int(ss.generate_state(1, dtype=np.uint64)[0])

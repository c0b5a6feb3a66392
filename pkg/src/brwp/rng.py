"""Counter-based random streams.

Every draw is a pure function of ``(seed, purpose, iteration, particle id,
draw index)``, computed with the Philox4x64-10 bijection. Nothing is carried
between calls, so results do not depend on evaluation order, batching, or the
number of worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_M0 = np.uint64(0xD2E7470EE14C6C93)
_M1 = np.uint64(0xCA5A826395121157)
_W0 = np.uint64(0x9E3779B97F4A7C15)
_W1 = np.uint64(0xBB67AE8584CAA73B)
_MASK32 = np.uint64(0xFFFFFFFF)
_S32 = np.uint64(32)
_S11 = np.uint64(11)
_ROUNDS = 10

# purpose tags, folded into the second key word
INIT = 1
NOISE = 2
ACCEPT = 3
NORMALIZER = 4
SUBSAMPLE = 5


def _mulhilo(a, b):
    lo = a * b
    a_lo, a_hi = a & _MASK32, a >> _S32
    b_lo, b_hi = b & _MASK32, b >> _S32
    t = a_hi * b_lo + ((a_lo * b_lo) >> _S32)
    w = (t & _MASK32) + a_lo * b_hi
    hi = a_hi * b_hi + (t >> _S32) + (w >> _S32)
    return hi, lo


def philox4x64(counter, key):
    """Philox4x64-10 applied elementwise.

    ``counter`` is a 4-tuple of broadcastable uint64 arrays, ``key`` a pair of
    uint64 scalars. Returns the four output words.
    """
    c0, c1, c2, c3 = np.broadcast_arrays(*(np.asarray(c, dtype=np.uint64) for c in counter))
    k0, k1 = np.uint64(key[0]), np.uint64(key[1])
    with np.errstate(over="ignore"):
        for r in range(_ROUNDS):
            if r:
                k0 = k0 + _W0
                k1 = k1 + _W1
            hi0, lo0 = _mulhilo(_M0, c0)
            hi1, lo1 = _mulhilo(_M1, c2)
            c0, c1, c2, c3 = hi1 ^ c1 ^ k0, lo1, hi0 ^ c3 ^ k1, lo0
    return c0, c1, c2, c3


def _to_unit_open(words):
    # (0, 1]: 53 random mantissa bits, never exactly zero
    return ((words >> _S11).astype(np.float64) + 1.0) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class RngStream:
    """Keyed generator; draws are addressed, never consumed."""

    seed: int

    def _key(self, purpose):
        return (np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF), np.uint64(purpose))

    def _words(self, purpose, iteration, ids, n_blocks):
        ids = np.asarray(ids, dtype=np.uint64).reshape(-1, 1)
        blocks = np.arange(n_blocks, dtype=np.uint64).reshape(1, -1)
        it = np.uint64(iteration)
        words = philox4x64((it, ids, blocks, np.uint64(0)), self._key(purpose))
        # (len(ids), n_blocks, 4) -> (len(ids), 4 * n_blocks)
        return np.stack(words, axis=-1).reshape(ids.shape[0], 4 * n_blocks)

    def uniform(self, purpose, iteration, ids, count):
        """Uniforms in (0, 1], shape ``(len(ids), count)``."""
        n_blocks = -(-count // 4)
        return _to_unit_open(self._words(purpose, iteration, ids, n_blocks))[:, :count]

    def normal(self, purpose, iteration, ids, count):
        """Standard normals via Box-Muller, shape ``(len(ids), count)``."""
        n_pairs = -(-count // 2)
        u = self.uniform(purpose, iteration, ids, 2 * n_pairs)
        u1, u2 = u[:, 0::2], u[:, 1::2]
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * np.pi * u2
        z = np.empty((u.shape[0], 2 * n_pairs))
        z[:, 0::2] = radius * np.cos(angle)
        z[:, 1::2] = radius * np.sin(angle)
        return z[:, :count]

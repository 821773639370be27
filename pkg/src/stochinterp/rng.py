"""Counter-based random streams (Philox4x32-10).

Every random number is a pure function of (seed, stream, slot, index), so
batches can be split across workers without changing the values drawn.
"""
from __future__ import annotations

import numpy as np

_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_MASK = np.uint64(0xFFFFFFFF)
_SHIFT = np.uint64(32)

# purpose tags keep unrelated consumers of the same seed apart
PURPOSE_TIME = 1
PURPOSE_LATENT = 2
PURPOSE_SOURCE0 = 3
PURPOSE_SOURCE1 = 4
PURPOSE_SDE = 5
PURPOSE_MISC = 6


def philox4x32(counter: np.ndarray, key, rounds: int = 10) -> np.ndarray:
    """Philox4x32 block function.

    counter: (..., 4) uint32 array, key: pair of uint32 (or (..., 2) array).
    Returns an array of the same shape as ``counter``.
    """
    ctr = np.asarray(counter, dtype=np.uint32)
    key = np.asarray(key, dtype=np.uint32)
    c0, c1, c2, c3 = (ctr[..., i].astype(np.uint64) for i in range(4))
    k0 = np.broadcast_to(key[..., 0], ctr.shape[:-1]).astype(np.uint64)
    k1 = np.broadcast_to(key[..., 1], ctr.shape[:-1]).astype(np.uint64)
    for r in range(rounds):
        p0 = c0 * _M0
        p1 = c2 * _M1
        hi0, lo0 = p0 >> _SHIFT, p0 & _MASK
        hi1, lo1 = p1 >> _SHIFT, p1 & _MASK
        c0 = hi1 ^ c1 ^ k0
        c1 = lo1
        c2 = hi0 ^ c3 ^ k1
        c3 = lo0
        if r < rounds - 1:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
    return np.stack([c0, c1, c2, c3], axis=-1).astype(np.uint32)


def _key_from_seed(seed: int) -> np.ndarray:
    seed = int(seed) & 0xFFFFFFFFFFFFFFFF
    return np.array([seed & 0xFFFFFFFF, seed >> 32], dtype=np.uint32)


class StreamRNG:
    """Reproducible random numbers addressed by (stream, slot).

    ``stream`` is typically a path or draw index and ``slot`` a step index.
    The same address always yields the same numbers.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.key = _key_from_seed(seed)

    def _blocks(self, streams, slot, nblocks: int, purpose: int) -> np.ndarray:
        streams = np.asarray(streams, dtype=np.uint64).reshape(-1)
        if nblocks >= 1 << 24:
            raise ValueError("too many blocks requested for one slot")
        m = streams.shape[0]
        ctr = np.empty((m, nblocks, 4), dtype=np.uint32)
        ctr[..., 0] = (streams & _MASK).astype(np.uint32)[:, None]
        ctr[..., 1] = (streams >> _SHIFT).astype(np.uint32)[:, None]
        ctr[..., 2] = np.uint32(int(slot) & 0xFFFFFFFF)
        ctr[..., 3] = (np.uint32(purpose << 24) | np.arange(nblocks, dtype=np.uint32))[None, :]
        return philox4x32(ctr, self.key)

    def uniforms(self, streams, n: int, slot: int = 0, purpose: int = PURPOSE_MISC) -> np.ndarray:
        """Doubles in the open interval (0, 1), shape (len(streams), n)."""
        nb = (n + 1) // 2
        w = self._blocks(streams, slot, max(nb, 1), purpose).astype(np.uint64)
        # two 53-bit doubles per block
        a = ((w[..., 0] >> np.uint64(5)) << np.uint64(26)) | (w[..., 1] >> np.uint64(6))
        b = ((w[..., 2] >> np.uint64(5)) << np.uint64(26)) | (w[..., 3] >> np.uint64(6))
        u = np.stack([a, b], axis=-1).reshape(w.shape[0], -1)[:, :n]
        return (u.astype(np.float64) + 0.5) * 2.0 ** -53

    def normals(self, streams, n: int, slot: int = 0, purpose: int = PURPOSE_MISC) -> np.ndarray:
        """Standard normals via Box-Muller, shape (len(streams), n)."""
        m = 2 * ((n + 1) // 2)
        u = self.uniforms(streams, m, slot=slot, purpose=purpose)
        u1, u2 = u[:, 0::2], u[:, 1::2]
        r = np.sqrt(-2.0 * np.log(u1))
        th = 2.0 * np.pi * u2
        z = np.stack([r * np.cos(th), r * np.sin(th)], axis=-1).reshape(u.shape[0], -1)
        return z[:, :n]

    def integers(self, streams, high: int, slot: int = 0, purpose: int = PURPOSE_MISC) -> np.ndarray:
        """One integer in [0, high) per stream."""
        u = self.uniforms(streams, 1, slot=slot, purpose=purpose)[:, 0]
        return np.minimum((u * high).astype(np.int64), high - 1)

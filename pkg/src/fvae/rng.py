"""SplitMix64 counter generator with Box-Muller normals.

The stream is a pure function of the 64-bit seed: output ``i`` (1-based) is
``mix(seed + i * GOLDEN)`` with the standard SplitMix64 finalizer, so it can be
reproduced bit-for-bit in any language with wrapping 64-bit arithmetic.

    GOLDEN = 0x9E3779B97F4A7C15
    mix(z): z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
            z = (z ^ (z >> 27)) * 0x94D049BB133111EB
            return z ^ (z >> 31)

Uniforms are ``(u64 >> 11) * 2**-53`` in [0, 1). A normal pair is drawn from
two uniforms ``(a, b)`` as ``r = sqrt(-2 log(1 - a))``, ``(r cos 2 pi b,
r sin 2 pi b)``; both values are used, the second one kept for the next call.
"""

from __future__ import annotations

import numpy as np

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
MIX1 = np.uint64(0xBF58476D1CE4E5B9)
MIX2 = np.uint64(0x94D049BB133111EB)
MASK64 = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * MIX1
        z = (z ^ (z >> np.uint64(27))) * MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic, splittable random stream."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.counter = 0
        self._spare: float | None = None

    def next_u64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            z = np.uint64(self.seed) + idx * GOLDEN
        return _mix(z)

    def uniform(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53
        return u.reshape(shape)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        out = np.empty(n, dtype=np.float64)
        k = 0
        if n and self._spare is not None:
            out[0] = self._spare
            self._spare = None
            k = 1
        need = n - k
        if need > 0:
            pairs = (need + 1) // 2
            u = self.uniform(2 * pairs).reshape(pairs, 2)
            r = np.sqrt(-2.0 * np.log1p(-u[:, 0]))
            theta = 2.0 * np.pi * u[:, 1]
            z = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1).reshape(-1)
            out[k:] = z[:need]
            if z.size > need:
                self._spare = float(z[-1])
        return out.reshape(shape)

    def integers(self, high: int, size) -> np.ndarray:
        """Integers in [0, high) as floor(uniform * high)."""
        return np.floor(self.uniform(size) * high).astype(np.int64)

    def split(self) -> Rng:
        """Child stream seeded from this stream's next output."""
        return Rng(int(_mix(self.next_u64(1))[0]))

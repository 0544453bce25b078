"""Deterministic counter-based random numbers.

Every draw is a pure function of (seed, stream, counter), so identical seeds
reproduce identical sample streams on any platform, substreams are cheap to
derive, and the full generator state serializes as three integers. Uniforms
come from the splitmix64 finalizer applied to the counter sequence; normal
variates use the Box-Muller transform on uniform pairs.
"""

from __future__ import annotations

import numpy as np

__all__ = ["Rng"]

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB

_U_GOLDEN = np.uint64(_GOLDEN)
_U_MIX1 = np.uint64(_MIX1)
_U_MIX2 = np.uint64(_MIX2)
_U30 = np.uint64(30)
_U27 = np.uint64(27)
_U31 = np.uint64(31)
_U11 = np.uint64(11)
_INV53 = 1.0 / float(1 << 53)


def _mix_int(x: int) -> int:
    """splitmix64 finalizer on a python int (used for keys, not bulk draws)."""
    x &= _MASK
    x = (x ^ (x >> 30)) * _MIX1 & _MASK
    x = (x ^ (x >> 27)) * _MIX2 & _MASK
    return x ^ (x >> 31)


def _mix_array(x: np.ndarray) -> np.ndarray:
    x = (x ^ (x >> _U30)) * _U_MIX1
    x = (x ^ (x >> _U27)) * _U_MIX2
    return x ^ (x >> _U31)


class Rng:
    """Counter-based generator with derivable substreams.

    The state is (seed, stream, counter). Draw ``i`` of a stream hashes
    ``key + (i+1)*golden`` through the splitmix64 finalizer, where ``key``
    mixes seed and stream together.
    """

    def __init__(self, seed: int, stream: int = 0, counter: int = 0):
        self.seed = int(seed) & _MASK
        self.stream = int(stream) & _MASK
        self.counter = int(counter)
        self._key = np.uint64(_mix_int(_mix_int(self.seed) ^ _mix_int(self.stream * _GOLDEN + 1)))

    def substream(self, stream: int) -> "Rng":
        """Independent generator keyed off the same seed."""
        return Rng(self.seed, stream=stream)

    def state(self) -> tuple[int, int, int]:
        return (self.seed, self.stream, self.counter)

    @classmethod
    def from_state(cls, state) -> "Rng":
        seed, stream, counter = state
        return cls(seed, stream=stream, counter=counter)

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix_array(self._key + idx * _U_GOLDEN)

    def uniforms(self, n: int) -> np.ndarray:
        """n doubles uniform on [0, 1), from the top 53 bits of each draw."""
        return (self._raw(n) >> _U11).astype(np.float64) * _INV53

    def normals(self, n: int, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        """n doubles from N(mu, sigma^2) via Box-Muller."""
        m = (n + 1) // 2
        bits = self._raw(2 * m)
        # u1 in (0, 1] so the log is finite
        u1 = ((bits[:m] >> _U11).astype(np.float64) + 1.0) * _INV53
        u2 = (bits[m:] >> _U11).astype(np.float64) * _INV53
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return mu + sigma * z

    def normal_array(self, shape, mu: float = 0.0, sigma: float = 1.0) -> np.ndarray:
        return self.normals(int(np.prod(shape)), mu, sigma).reshape(shape)

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), rejection-sampled for exactness."""
        if n <= 0:
            raise ValueError("randbelow needs a positive bound")
        limit = _MASK + 1 - ((_MASK + 1) % n)
        while True:
            v = int(self._raw(1)[0])
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.randbelow(i + 1)
            items[i], items[j] = items[j], items[i]

    def choice(self, items):
        return items[self.randbelow(len(items))]

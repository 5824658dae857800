"""Counter-based pseudo-random numbers.

Every stream is a pure function of (seed, counter), so identical seeds and
call sequences reproduce identical values on any platform, and independent
streams can be derived for parallel runs without coordination.  The mixing
function is the splitmix64 finalizer.
"""

from __future__ import annotations

import math

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4B7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_DERIVE_SALT = np.uint64(0xD6E8FEB86659FD93)

_INV_2_53 = 1.0 / float(1 << 53)


def _mix(state: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer over a uint64 array (wraps modulo 2**64)."""
    with np.errstate(over="ignore"):
        z = state
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


class Rng:
    """Deterministic counter-based generator.

    ``derive(index)`` yields an independent child stream; children of the
    same parent with distinct indices never collide, which is what grid
    cells use to get per-cell seeds from one master seed.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = _mix(np.array([self.seed], dtype=np.uint64))[0]
        self._counter = 0

    def derive(self, index: int) -> "Rng":
        with np.errstate(over="ignore"):
            salted = _mix(np.array([np.uint64(index & 0xFFFFFFFFFFFFFFFF) + _DERIVE_SALT],
                                   dtype=np.uint64))[0]
            child = Rng.__new__(Rng)
            child.seed = int(self._key ^ salted)
            child._key = _mix(np.array([child.seed], dtype=np.uint64))[0]
            child._counter = 0
            return child

    def _raw(self, n: int) -> np.ndarray:
        idx = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix(self._key + idx * _GOLDEN)

    def uniform(self, shape=()) -> np.ndarray:
        """float64 samples in [0, 1) with 53-bit resolution."""
        n = int(np.prod(shape)) if shape else 1
        vals = (self._raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return vals.reshape(shape) if shape else vals[0]

    def normal(self, shape=()) -> np.ndarray:
        """Standard normal samples via Box-Muller."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform((pairs,))  # (0, 1]: keeps log finite
        u2 = self.uniform((pairs,))
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * math.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return z.reshape(shape) if shape else z[0]

    def integers(self, low: int, high: int, shape=()) -> np.ndarray:
        """Integers in [low, high), uniform up to 53-bit rounding."""
        if high <= low:
            raise ValueError(f"empty integer range [{low}, {high})")
        u = self.uniform(shape if shape else (1,))
        vals = low + np.floor(u * (high - low)).astype(np.int64)
        vals = np.minimum(vals, high - 1)
        return vals.reshape(shape) if shape else int(vals[0])

    def permutation(self, n: int) -> np.ndarray:
        """Deterministic permutation of range(n)."""
        keys = self.uniform((n,))
        return np.argsort(keys, kind="stable")
